#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfstyle/grid.hpp"
#include "rfstyle/image.hpp"
#include "rfstyle/maskgen.hpp"
#include "rfstyle/render.hpp"
#include "rfstyle/task.hpp"

namespace rfstyle {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CTNS tensors: "CTNS", u32 version, u8 dtype, u8 ndim, u32 dims[ndim],
// little-endian row-major payload, u32 CRC32 of the payload.
// ---------------------------------------------------------------------------

enum class DType : std::uint8_t { F32 = 0, U8 = 1, I32 = 2 };

inline constexpr std::uint32_t kCtnsVersion = 1;

struct Tensor {
    DType dtype = DType::F32;
    std::vector<std::uint32_t> dims;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;
    std::vector<std::int32_t> i32;

    std::size_t element_count() const;

    static Tensor of(std::vector<std::uint32_t> dims, std::vector<float> data);
    static Tensor of(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> data);
    static Tensor of(std::vector<std::uint32_t> dims, std::vector<std::int32_t> data);
};

bool operator==(const Tensor& a, const Tensor& b);

std::vector<std::uint8_t> encode_ctns(const Tensor& t);
/// Throws Format on bad magic/version/dtype, size mismatch or CRC failure.
Tensor decode_ctns(std::span<const std::uint8_t> bytes);
void write_ctns(const fs::path& path, const Tensor& t);
Tensor read_ctns(const fs::path& path);

/// (H, W, C) float32.
Tensor feature_to_tensor(const FeatureMap& map);
FeatureMap tensor_to_feature(const Tensor& t, FeatureSpace space);

/// (L, C) float32; label ids are row indices.
LabelEmbeddingSet read_embeddings(const fs::path& path);
void write_embeddings(const fs::path& path, const LabelEmbeddingSet& set);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes);
nlohmann::json read_json(const fs::path& path);
/// Pretty-printed, trailing newline.
void write_json(const fs::path& path, const nlohmann::json& j);

/// 8-bit RGB; values are quantized with round(255 v) after clamping to [0,1].
Image read_png_rgb(const fs::path& path);
void write_png_rgb(const fs::path& path, const Image& image);
/// 8-bit single channel, pixel value = label. Labels outside [0,255] throw Contract.
LabelMask read_png_mask(const fs::path& path);
void write_png_mask(const fs::path& path, const LabelMask& mask);

// ---------------------------------------------------------------------------
// Grid checkpoints: a directory holding density.ctns [nz,ny,nx],
// sh.ctns [nz,ny,nx,3,B] and grid.json.
// ---------------------------------------------------------------------------

void save_checkpoint(const fs::path& dir, const VoxelGrid& grid);
VoxelGrid load_checkpoint(const fs::path& dir);

// ---------------------------------------------------------------------------
// View bundles
// ---------------------------------------------------------------------------

nlohmann::json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);

struct CameraSet {
    std::vector<Camera> cameras;
    std::optional<Vec3> bbox_min, bbox_max;
    Vec3 background = Vec3::Zero();
};

CameraSet read_cameras(const fs::path& path);
void write_cameras(const fs::path& path, const CameraSet& set);

struct Bundle {
    fs::path root;
    CameraSet cameras;
    std::vector<View> views;  // names "000", "001", ...
    bool has_masks = false;
};

/// Throws Io for a missing directory/cameras.json and Format for gaps in the
/// view numbering or size mismatches. Missing masks load as all zeros.
Bundle load_bundle(const fs::path& root);
void save_bundle(const fs::path& root, std::span<const View> views, const CameraSet& cameras);

fs::path feature_path(const fs::path& bundle_root, const std::string& stem, const std::string& extractor);
void save_feature(const fs::path& bundle_root, const std::string& stem, const std::string& extractor,
                  const FeatureMap& map);

using FeatureTable = std::map<std::string, FeatureMap>;

/// Features of every bundle view for one extractor name; MissingFeature if a
/// view lacks its file.
std::shared_ptr<FeatureTable> load_feature_table(const Bundle& bundle, const std::string& extractor,
                                                 FeatureSpace space);

// ---------------------------------------------------------------------------
// Task files
// ---------------------------------------------------------------------------

/// Parses task.json. Style paths are relative to the file. A precomputed
/// semantic extractor reads bundle features plus `<style stem>.<name>.ctns`
/// next to each style image (or in the bundle's features/).
TaskSpec load_task(const fs::path& path, const Bundle& bundle);

/// Labels present in any bundle mask.
std::vector<int> bundle_labels(const Bundle& bundle);

}  // namespace rfstyle
