#include "rfstyle/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <png.h>
#include <zlib.h>

#include "rfstyle/error.hpp"
#include "rfstyle/stylize.hpp"

namespace rfstyle {

namespace {

using json = nlohmann::json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::size_t dtype_size(DType d) { return d == DType::U8 ? 1 : 4; }

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks to stay portable.
    std::size_t off = 0;
    while (off < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
        crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
        off += n;
    }
    return static_cast<std::uint32_t>(crc);
}

std::size_t product(const std::vector<std::uint32_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::vector<double> vec_of(const json& j, std::size_t n, const char* what) {
    if (!j.is_array() || j.size() != n)
        throw Error(ErrorCode::Format, std::string(what) + " must be an array of " + std::to_string(n) + " numbers");
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) throw Error(ErrorCode::Format, std::string(what) + " must hold numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

Vec3 vec3_of(const json& j, const char* what) {
    const auto v = vec_of(j, 3, what);
    return {v[0], v[1], v[2]};
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

// A single number stands for a gray background.
Vec3 background_of(const json& j) {
    if (j.is_number()) return Vec3::Constant(j.get<double>());
    return vec3_of(j, "background");
}

}  // namespace

std::size_t Tensor::element_count() const { return product(dims); }

Tensor Tensor::of(std::vector<std::uint32_t> dims, std::vector<float> data) {
    Tensor t;
    t.dtype = DType::F32;
    t.dims = std::move(dims);
    t.f32 = std::move(data);
    if (t.f32.size() != t.element_count()) throw Error(ErrorCode::Dimension, "tensor data does not match dims");
    return t;
}

Tensor Tensor::of(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> data) {
    Tensor t;
    t.dtype = DType::U8;
    t.dims = std::move(dims);
    t.u8 = std::move(data);
    if (t.u8.size() != t.element_count()) throw Error(ErrorCode::Dimension, "tensor data does not match dims");
    return t;
}

Tensor Tensor::of(std::vector<std::uint32_t> dims, std::vector<std::int32_t> data) {
    Tensor t;
    t.dtype = DType::I32;
    t.dims = std::move(dims);
    t.i32 = std::move(data);
    if (t.i32.size() != t.element_count()) throw Error(ErrorCode::Dimension, "tensor data does not match dims");
    return t;
}

bool operator==(const Tensor& a, const Tensor& b) {
    if (a.dtype != b.dtype || a.dims != b.dims) return false;
    switch (a.dtype) {
        case DType::F32:
            return a.f32.size() == b.f32.size() &&
                   std::memcmp(a.f32.data(), b.f32.data(), a.f32.size() * sizeof(float)) == 0;
        case DType::U8: return a.u8 == b.u8;
        case DType::I32: return a.i32 == b.i32;
    }
    return false;
}

std::vector<std::uint8_t> encode_ctns(const Tensor& t) {
    if (t.dims.size() > 255) throw Error(ErrorCode::Contract, "too many tensor dimensions");
    const std::size_t n = t.element_count();
    const std::size_t have = t.dtype == DType::F32 ? t.f32.size() : t.dtype == DType::U8 ? t.u8.size() : t.i32.size();
    if (have != n) throw Error(ErrorCode::Dimension, "tensor data does not match dims");

    std::vector<std::uint8_t> out{'C', 'T', 'N', 'S'};
    put_u32(out, kCtnsVersion);
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    const std::size_t start = out.size();
    out.reserve(start + n * dtype_size(t.dtype) + 4);
    switch (t.dtype) {
        case DType::F32:
            for (float v : t.f32) put_u32(out, std::bit_cast<std::uint32_t>(v));
            break;
        case DType::U8: out.insert(out.end(), t.u8.begin(), t.u8.end()); break;
        case DType::I32:
            for (auto v : t.i32) put_u32(out, static_cast<std::uint32_t>(v));
            break;
    }
    const std::uint32_t crc = crc32_of(std::span(out).subspan(start));
    put_u32(out, crc);
    return out;
}

Tensor decode_ctns(std::span<const std::uint8_t> b) {
    if (b.size() < 10 || std::memcmp(b.data(), "CTNS", 4) != 0) throw Error(ErrorCode::Format, "not a CTNS tensor");
    const std::uint32_t version = get_u32(b.data() + 4);
    if (version != kCtnsVersion) throw Error(ErrorCode::Format, "unsupported CTNS version " + std::to_string(version));
    const std::uint8_t code = b[8];
    if (code > 2) throw Error(ErrorCode::Format, "unknown CTNS dtype " + std::to_string(code));
    Tensor t;
    t.dtype = static_cast<DType>(code);
    const std::size_t ndim = b[9];
    std::size_t off = 10;
    if (b.size() < off + 4 * ndim) throw Error(ErrorCode::Format, "truncated CTNS header");
    for (std::size_t i = 0; i < ndim; ++i, off += 4) t.dims.push_back(get_u32(b.data() + off));
    const std::size_t n = t.element_count();
    const std::size_t bytes = n * dtype_size(t.dtype);
    if (b.size() != off + bytes + 4) throw Error(ErrorCode::Format, "CTNS payload size does not match dims");
    const auto payload = b.subspan(off, bytes);
    if (crc32_of(payload) != get_u32(b.data() + off + bytes)) throw Error(ErrorCode::Format, "CTNS checksum mismatch");
    switch (t.dtype) {
        case DType::F32:
            t.f32.resize(n);
            for (std::size_t i = 0; i < n; ++i) t.f32[i] = std::bit_cast<float>(get_u32(payload.data() + 4 * i));
            break;
        case DType::U8: t.u8.assign(payload.begin(), payload.end()); break;
        case DType::I32:
            t.i32.resize(n);
            for (std::size_t i = 0; i < n; ++i) t.i32[i] = static_cast<std::int32_t>(get_u32(payload.data() + 4 * i));
            break;
    }
    return t;
}

void write_ctns(const fs::path& path, const Tensor& t) { write_bytes(path, encode_ctns(t)); }

Tensor read_ctns(const fs::path& path) {
    const auto bytes = read_bytes(path);
    try {
        return decode_ctns(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

Tensor feature_to_tensor(const FeatureMap& map) {
    std::vector<float> data(map.data.begin(), map.data.end());
    return Tensor::of({std::uint32_t(map.height), std::uint32_t(map.width), std::uint32_t(map.channels)},
                      std::move(data));
}

FeatureMap tensor_to_feature(const Tensor& t, FeatureSpace space) {
    if (t.dtype != DType::F32 || t.dims.size() != 3)
        throw Error(ErrorCode::Format, "feature tensors are float32 (H, W, C)");
    FeatureMap m(int(t.dims[0]), int(t.dims[1]), int(t.dims[2]), space);
    std::copy(t.f32.begin(), t.f32.end(), m.data.begin());
    return m;
}

LabelEmbeddingSet read_embeddings(const fs::path& path) {
    const Tensor t = read_ctns(path);
    if (t.dtype != DType::F32 || t.dims.size() != 2)
        throw Error(ErrorCode::Format, "embeddings are float32 (L, C)");
    LabelEmbeddingSet set;
    const std::size_t c = t.dims[1];
    for (std::uint32_t l = 0; l < t.dims[0]; ++l) {
        LabelEmbedding e;
        e.id = static_cast<int>(l);
        e.vec.assign(t.f32.begin() + l * c, t.f32.begin() + (l + 1) * c);
        set.labels.push_back(std::move(e));
    }
    return set;
}

void write_embeddings(const fs::path& path, const LabelEmbeddingSet& set) {
    if (set.labels.empty()) throw Error(ErrorCode::Contract, "no embeddings to write");
    const std::size_t c = set.labels.front().vec.size();
    std::vector<float> data;
    for (std::size_t i = 0; i < set.labels.size(); ++i) {
        const auto& e = set.labels[i];
        if (e.id != static_cast<int>(i)) throw Error(ErrorCode::Contract, "embedding ids must equal row indices");
        if (e.vec.size() != c) throw Error(ErrorCode::Dimension, "embeddings differ in width");
        data.insert(data.end(), e.vec.begin(), e.vec.end());
    }
    write_ctns(path, Tensor::of({std::uint32_t(set.labels.size()), std::uint32_t(c)}, std::move(data)));
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Format, path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    const std::string text = j.dump(2) + "\n";
    write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

std::vector<std::uint8_t> read_png(const fs::path& path, std::uint32_t format, int& w, int& h, bool gray_only) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!fs::exists(path)) throw Error(ErrorCode::Io, "missing " + path.string());
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw Error(ErrorCode::Format, path.string() + ": " + img.message);
    if (gray_only && (img.format & PNG_FORMAT_FLAG_COLOR)) {
        png_image_free(&img);
        throw Error(ErrorCode::Format, path.string() + ": masks must be single-channel");
    }
    img.format = format;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
        throw Error(ErrorCode::Format, path.string() + ": " + img.message);
    w = static_cast<int>(img.width);
    h = static_cast<int>(img.height);
    return buf;
}

void write_png(const fs::path& path, std::uint32_t format, int w, int h, const std::vector<std::uint8_t>& buf) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = format;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw Error(ErrorCode::Io, path.string() + ": " + img.message);
}

}  // namespace

Image read_png_rgb(const fs::path& path) {
    int w = 0, h = 0;
    const auto buf = read_png(path, PNG_FORMAT_RGB, w, h, false);
    Image out(h, w, 3);
    for (std::size_t i = 0; i < buf.size(); ++i) out.data[i] = buf[i] / 255.0;
    return out;
}

void write_png_rgb(const fs::path& path, const Image& image) {
    if (image.channels != 3) throw Error(ErrorCode::Dimension, "PNG output expects RGB");
    std::vector<std::uint8_t> buf(image.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
    write_png(path, PNG_FORMAT_RGB, image.width, image.height, buf);
}

LabelMask read_png_mask(const fs::path& path) {
    int w = 0, h = 0;
    const auto buf = read_png(path, PNG_FORMAT_GRAY, w, h, true);
    LabelMask out(h, w);
    std::copy(buf.begin(), buf.end(), out.labels.begin());
    return out;
}

void write_png_mask(const fs::path& path, const LabelMask& mask) {
    std::vector<std::uint8_t> buf(mask.labels.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        if (mask.labels[i] < 0 || mask.labels[i] > 255)
            throw Error(ErrorCode::Contract, "mask labels must fit in 8 bits");
        buf[i] = static_cast<std::uint8_t>(mask.labels[i]);
    }
    write_png(path, PNG_FORMAT_GRAY, mask.width, mask.height, buf);
}

void save_checkpoint(const fs::path& dir, const VoxelGrid& grid) {
    fs::create_directories(dir);
    const auto& d = grid.dims();
    const std::vector<std::uint32_t> sdims{std::uint32_t(d[2]), std::uint32_t(d[1]), std::uint32_t(d[0])};
    write_ctns(dir / "density.ctns", Tensor::of(sdims, std::vector<float>(grid.density().begin(), grid.density().end())));
    auto shdims = sdims;
    shdims.push_back(3);
    shdims.push_back(std::uint32_t(grid.basis_count()));
    write_ctns(dir / "sh.ctns", Tensor::of(shdims, std::vector<float>(grid.sh().begin(), grid.sh().end())));
    json meta;
    meta["format"] = "rfstyle-grid";
    meta["version"] = 1;
    meta["dims"] = {d[0], d[1], d[2]};
    meta["bbox_min"] = vec3_json(grid.bbox_min());
    meta["bbox_max"] = vec3_json(grid.bbox_max());
    meta["sh_degree"] = grid.sh_degree();
    meta["density_frozen"] = grid.density_frozen();
    write_json(dir / "grid.json", meta);
}

VoxelGrid load_checkpoint(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "no checkpoint directory at " + dir.string());
    const json meta = read_json(dir / "grid.json");
    try {
        if (meta.at("format") != "rfstyle-grid") throw Error(ErrorCode::Format, "not a grid checkpoint");
        const auto dv = vec_of(meta.at("dims"), 3, "dims");
        const std::array<int, 3> dims{int(dv[0]), int(dv[1]), int(dv[2])};
        VoxelGrid grid(dims, vec3_of(meta.at("bbox_min"), "bbox_min"), vec3_of(meta.at("bbox_max"), "bbox_max"),
                       meta.at("sh_degree").get<int>());
        const Tensor density = read_ctns(dir / "density.ctns");
        const Tensor sh = read_ctns(dir / "sh.ctns");
        const std::vector<std::uint32_t> sdims{std::uint32_t(dims[2]), std::uint32_t(dims[1]), std::uint32_t(dims[0])};
        auto shdims = sdims;
        shdims.push_back(3);
        shdims.push_back(std::uint32_t(grid.basis_count()));
        if (density.dtype != DType::F32 || density.dims != sdims)
            throw Error(ErrorCode::Format, "density tensor does not match grid.json");
        if (sh.dtype != DType::F32 || sh.dims != shdims)
            throw Error(ErrorCode::Format, "sh tensor does not match grid.json");
        std::ranges::copy(density.f32, grid.mutable_density().begin());
        std::ranges::copy(sh.f32, grid.mutable_sh().begin());
        if (meta.value("density_frozen", false)) grid.freeze_density();
        return grid;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Format, dir.string() + "/grid.json: " + e.what());
    }
}

json camera_to_json(const Camera& cam) {
    json r = json::array();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.push_back(cam.rotation(i, j));
    return {{"rotation", r},
            {"translation", vec3_json(cam.translation)},
            {"focal", cam.focal},
            {"width", cam.width},
            {"height", cam.height},
            {"near", cam.near_plane},
            {"far", cam.far_plane}};
}

Camera camera_from_json(const json& j) {
    try {
        Camera cam;
        const auto r = vec_of(j.at("rotation"), 9, "rotation");
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) cam.rotation(i, k) = r[3 * i + k];
        cam.translation = vec3_of(j.at("translation"), "translation");
        cam.focal = j.at("focal").get<double>();
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        cam.near_plane = j.value("near", 0.01);
        cam.far_plane = j.value("far", 100.0);
        cam.validate();
        return cam;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Format, std::string("camera entry: ") + e.what());
    }
}

CameraSet read_cameras(const fs::path& path) {
    const json j = read_json(path);
    CameraSet set;
    try {
        const json& list = j.is_array() ? j : j.at("views");
        for (const auto& v : list) set.cameras.push_back(camera_from_json(v));
        if (j.is_object()) {
            if (j.contains("bbox_min")) set.bbox_min = vec3_of(j["bbox_min"], "bbox_min");
            if (j.contains("bbox_max")) set.bbox_max = vec3_of(j["bbox_max"], "bbox_max");
            if (j.contains("background")) set.background = background_of(j["background"]);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Format, path.string() + ": " + e.what());
    }
    return set;
}

void write_cameras(const fs::path& path, const CameraSet& set) {
    json j;
    if (set.bbox_min) j["bbox_min"] = vec3_json(*set.bbox_min);
    if (set.bbox_max) j["bbox_max"] = vec3_json(*set.bbox_max);
    j["background"] = vec3_json(set.background);
    j["views"] = json::array();
    for (std::size_t i = 0; i < set.cameras.size(); ++i) {
        json c = camera_to_json(set.cameras[i]);
        char name[24];
        std::snprintf(name, sizeof name, "%03zu", i);
        c["name"] = name;
        j["views"].push_back(c);
    }
    write_json(path, j);
}

namespace {

std::string view_stem(std::size_t i) {
    char name[24];
    std::snprintf(name, sizeof name, "%03zu", i);
    return name;
}

}  // namespace

Bundle load_bundle(const fs::path& root) {
    if (!fs::is_directory(root)) throw Error(ErrorCode::Io, "no bundle directory at " + root.string());
    if (!fs::exists(root / "cameras.json")) throw Error(ErrorCode::Io, "bundle has no cameras.json");
    Bundle b;
    b.root = root;
    b.cameras = read_cameras(root / "cameras.json");

    std::size_t count = 0;
    if (fs::is_directory(root / "views"))
        for (const auto& entry : fs::directory_iterator(root / "views"))
            if (entry.path().extension() == ".png") ++count;
    for (std::size_t i = 0; i < count; ++i)
        if (!fs::exists(root / "views" / (view_stem(i) + ".png")))
            throw Error(ErrorCode::Format, "view numbering has a gap at " + view_stem(i));
    if (count != b.cameras.cameras.size())
        throw Error(ErrorCode::Format, "bundle has " + std::to_string(count) + " views but " +
                                           std::to_string(b.cameras.cameras.size()) + " cameras");

    b.has_masks = fs::is_directory(root / "masks");
    for (std::size_t i = 0; i < count; ++i) {
        View v;
        v.name = view_stem(i);
        v.camera = b.cameras.cameras[i];
        v.gt_image = read_png_rgb(root / "views" / (v.name + ".png"));
        if (v.gt_image.width != v.camera.width || v.gt_image.height != v.camera.height)
            throw Error(ErrorCode::Format, "view " + v.name + " does not match its camera size");
        const fs::path mp = root / "masks" / (v.name + ".png");
        if (fs::exists(mp)) {
            v.mask = read_png_mask(mp);
            if (v.mask.width != v.gt_image.width || v.mask.height != v.gt_image.height)
                throw Error(ErrorCode::Format, "mask " + v.name + " does not match its view size");
        } else {
            if (b.has_masks) throw Error(ErrorCode::Format, "bundle lacks mask " + v.name);
            v.mask = LabelMask(v.gt_image.height, v.gt_image.width, 0);
        }
        b.views.push_back(std::move(v));
    }
    return b;
}

void save_bundle(const fs::path& root, std::span<const View> views, const CameraSet& cameras) {
    fs::create_directories(root / "views");
    fs::create_directories(root / "masks");
    CameraSet set = cameras;
    set.cameras.clear();
    for (std::size_t i = 0; i < views.size(); ++i) {
        write_png_rgb(root / "views" / (view_stem(i) + ".png"), views[i].gt_image);
        write_png_mask(root / "masks" / (view_stem(i) + ".png"), views[i].mask);
        set.cameras.push_back(views[i].camera);
    }
    write_cameras(root / "cameras.json", set);
}

fs::path feature_path(const fs::path& bundle_root, const std::string& stem, const std::string& extractor) {
    return bundle_root / "features" / (stem + "." + extractor + ".ctns");
}

void save_feature(const fs::path& bundle_root, const std::string& stem, const std::string& extractor,
                  const FeatureMap& map) {
    write_ctns(feature_path(bundle_root, stem, extractor), feature_to_tensor(map));
}

std::shared_ptr<FeatureTable> load_feature_table(const Bundle& bundle, const std::string& extractor,
                                                 FeatureSpace space) {
    auto table = std::make_shared<FeatureTable>();
    int channels = -1;
    for (const auto& v : bundle.views) {
        const fs::path p = feature_path(bundle.root, v.name, extractor);
        if (!fs::exists(p)) throw Error(ErrorCode::MissingFeature, "missing " + p.string());
        FeatureMap m = tensor_to_feature(read_ctns(p), space);
        if (channels >= 0 && m.channels != channels)
            throw Error(ErrorCode::Format, extractor + " features differ in channel count");
        channels = m.channels;
        table->emplace(v.name, std::move(m));
    }
    return table;
}

std::vector<int> bundle_labels(const Bundle& bundle) {
    std::vector<int> out;
    for (const auto& v : bundle.views)
        for (int l : v.mask.labels)
            if (std::ranges::find(out, l) == out.end()) out.push_back(l);
    std::ranges::sort(out);
    return out;
}

namespace {

Extractor texture_from_json(const json& j) {
    const std::string kind = j.value("kind", "random-conv");
    if (kind == "random-conv")
        return Extractor::random_conv_bank(j.value("seed", std::uint64_t{0}), j.value("kernels", 16),
                                           j.value("stride", 2), j.value("rectify", true));
    if (kind == "rgb-patch") return Extractor::rgb_patch(j.value("patch", 1), j.value("stride", 1));
    throw Error(ErrorCode::Configuration, "texture extractor must be random-conv or rgb-patch, got " + kind);
}

}  // namespace

TaskSpec load_task(const fs::path& path, const Bundle& bundle) {
    json j;
    try {
        j = read_json(path);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::Format) throw;
        throw Error(ErrorCode::Configuration, e.what());
    }
    const fs::path base = path.parent_path();
    TaskSpec task;
    try {
        task.mode = parse_task_mode(j.at("mode").get<std::string>());
        task.loss.alpha = j.value("alpha", task.loss.alpha);
        task.loss.lambda = j.value("lambda", task.loss.lambda);
        task.loss.lambda_tv = j.value("lambda_tv", task.loss.lambda_tv);
        task.loss.preserve_term = j.value("preserve_term", task.loss.preserve_term);
        if (j.contains("optimizer")) {
            const json& o = j["optimizer"];
            task.optimizer.step_size = o.value("step_size", task.optimizer.step_size);
            task.optimizer.steps = o.value("steps", task.optimizer.steps);
            task.optimizer.views_per_step = o.value("views_per_step", task.optimizer.views_per_step);
            task.optimizer.seed = o.value("seed", task.optimizer.seed);
            task.optimizer.color_transfer = o.value("color_transfer", task.optimizer.color_transfer);
        }
        if (j.contains("texture_extractor")) task.texture = texture_from_json(j["texture_extractor"]);
        task.render.background = bundle.cameras.background;
        if (j.contains("render")) {
            task.render.step = j["render"].value("step", task.render.step);
            if (j["render"].contains("background")) task.render.background = background_of(j["render"]["background"]);
        }

        std::vector<std::pair<std::string, fs::path>> style_stems;
        for (const auto& l : j.at("labels"))
            if (l.contains("style")) {
                const fs::path sp = base / l["style"].get<std::string>();
                style_stems.emplace_back(sp.stem().string(), sp);
            }

        if (j.contains("semantic_extractor")) {
            const json& s = j["semantic_extractor"];
            const std::string kind = s.value("kind", "soft-palette");
            if (kind == "soft-palette") {
                std::vector<Vec3> palette;
                for (const auto& c : s.at("palette")) palette.push_back(vec3_of(c, "palette color"));
                task.semantic = Extractor::soft_palette(std::move(palette), s.value("sharpness", 20.0));
            } else if (kind == "precomputed") {
                const std::string name = s.value("name", "semantic-pixel");
                auto table = load_feature_table(bundle, name, FeatureSpace::Semantic);
                for (const auto& [stem, sp] : style_stems) {
                    if (table->count(stem)) continue;
                    fs::path fp = sp.parent_path() / (stem + "." + name + ".ctns");
                    if (!fs::exists(fp)) fp = feature_path(bundle.root, stem, name);
                    if (!fs::exists(fp)) throw Error(ErrorCode::MissingFeature, "no " + name + " features for " + stem);
                    table->emplace(stem, tensor_to_feature(read_ctns(fp), FeatureSpace::Semantic));
                }
                task.semantic = Extractor::precomputed(name, FeatureSpace::Semantic, std::move(table));
            } else {
                throw Error(ErrorCode::Configuration, "unknown semantic extractor " + kind);
            }
        }

        std::map<std::string, std::shared_ptr<const StyleTarget>> loaded;
        for (const auto& l : j.at("labels")) {
            const int label = l.at("label").get<int>();
            if (task.bindings.count(label)) throw Error(ErrorCode::Configuration, "label bound twice");
            if (l.value("preserve", false)) {
                task.bindings[label] = LabelBinding::keep();
                continue;
            }
            if (!l.contains("style")) throw Error(ErrorCode::Configuration, "label needs a style or preserve");
            const fs::path sp = base / l["style"].get<std::string>();
            const std::string mask_rel = l.value("style_mask", std::string());
            const std::string key = sp.string() + "|" + mask_rel;
            if (!loaded.count(key)) {
                Image img = read_png_rgb(sp);
                std::optional<LabelMask> mask;
                if (!mask_rel.empty()) mask = read_png_mask(base / mask_rel);
                loaded[key] = std::make_shared<StyleTarget>(
                    make_style_target(sp.stem().string(), std::move(img), mask ? &*mask : nullptr, task.texture,
                                      task.semantic ? &*task.semantic : nullptr));
            }
            task.bindings[label] = LabelBinding::stylize(loaded[key]);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Configuration, path.string() + ": " + e.what());
    }
    task.validate();
    return task;
}

}  // namespace rfstyle
