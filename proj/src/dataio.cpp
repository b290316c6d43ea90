#include "branchlens/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace branchlens {

static constexpr char kMagic[8] = {'B', 'L', 'N', 'S', '0', '0', '0', '1'};
// Guard against garbage headers requesting absurd allocations.
static constexpr std::uint64_t kMaxElements = 1ull << 28;

// ==================== enum names ====================

const char* role_name(Role role) {
    switch (role) {
        case Role::HSGAL1: return "HSGAL1";
        case Role::HSGAL2: return "HSGAL2";
        case Role::POOL: return "POOL";
        case Role::GLOBAL: return "GLOBAL";
    }
    return "?";
}

Role parse_role(const std::string& name) {
    if (name == "HSGAL1") return Role::HSGAL1;
    if (name == "HSGAL2") return Role::HSGAL2;
    if (name == "POOL") return Role::POOL;
    if (name == "GLOBAL") return Role::GLOBAL;
    throw Error(ErrorCode::SchemaViolation, "unknown role '" + name + "'");
}

const char* covariance_axis_name(CovarianceAxis axis) {
    return axis == CovarianceAxis::TEMPORAL ? "TEMPORAL" : "CROSS_SAMPLE";
}

CovarianceAxis parse_covariance_axis(const std::string& name) {
    if (name == "TEMPORAL") return CovarianceAxis::TEMPORAL;
    if (name == "CROSS_SAMPLE") return CovarianceAxis::CROSS_SAMPLE;
    throw Error(ErrorCode::SchemaViolation, "unknown covariance_axis '" + name + "'");
}

ComponentId parse_component(const std::string& text) {
    auto slash = text.find('/');
    if (slash == std::string::npos || slash == 0 || slash + 1 >= text.size())
        throw Error(ErrorCode::SchemaViolation, "component must be BLOCK/ROLE, got '" + text + "'");
    return ComponentId{text.substr(0, slash), parse_role(text.substr(slash + 1))};
}

// ==================== Layout ====================

int Layout::index_of(const ComponentId& id) const {
    for (std::size_t i = 0; i < components.size(); ++i)
        if (components[i] == id) return static_cast<int>(i);
    return -1;
}

std::vector<int> Layout::components_of_block(const std::string& block) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < components.size(); ++i)
        if (components[i].block == block) out.push_back(static_cast<int>(i));
    return out;
}

bool Layout::has_block(const std::string& block) const {
    return std::find(blocks.begin(), blocks.end(), block) != blocks.end();
}

Layout canonical_layout() {
    Layout layout;
    for (const char* b : {"B0", "B1", "B2", "B3"}) {
        for (Role r : {Role::HSGAL1, Role::HSGAL2, Role::POOL}) {
            layout.components.push_back({b, r});
            layout.axes.push_back(CovarianceAxis::TEMPORAL);
        }
        layout.blocks.push_back(b);
    }
    for (const char* g : {"GAT_S", "GAT_T"}) {
        layout.components.push_back({g, Role::GLOBAL});
        layout.axes.push_back(CovarianceAxis::TEMPORAL);
        layout.blocks.push_back(g);
    }
    return layout;
}

static void validate_layout(const Layout& layout) {
    if (layout.components.empty())
        throw Error(ErrorCode::SchemaViolation, "layout has no components");
    if (layout.axes.size() != layout.components.size())
        throw Error(ErrorCode::SchemaViolation, "layout axes do not match components");
    std::set<std::pair<std::string, Role>> seen;
    for (const auto& c : layout.components) {
        if (!seen.insert({c.block, c.role}).second)
            throw Error(ErrorCode::DuplicateComponent, "component " + c.str() + " listed twice");
    }
    std::set<std::string> block_set(layout.blocks.begin(), layout.blocks.end());
    if (block_set.size() != layout.blocks.size())
        throw Error(ErrorCode::SchemaViolation, "duplicate block name in layout");
    std::set<std::string> used;
    for (const auto& c : layout.components) {
        if (!block_set.count(c.block))
            throw Error(ErrorCode::SchemaViolation, "component block '" + c.block + "' missing from blocks");
        used.insert(c.block);
    }
    for (const auto& b : layout.blocks)
        if (!used.count(b))
            throw Error(ErrorCode::SchemaViolation, "block '" + b + "' has no components");
}

const SampleRecord* DatasetManifest::find_sample(const std::string& sample_id) const {
    for (const auto& s : samples)
        if (s.sample_id == sample_id) return &s;
    return nullptr;
}

// ==================== binary tensor records ====================

static void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

static std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::string encode_activation(const ActivationMatrix& m) {
    if (m.values.size() != m.rows * m.cols)
        throw Error(ErrorCode::DimensionMismatch, "tensor payload does not match dims");
    for (double v : m.values)
        if (!std::isfinite(v))
            throw Error(ErrorCode::NonFiniteValue, "tensor for " + m.component.str() + " has a non-finite value");
    std::string out;
    out.reserve(24 + m.values.size() * 8);
    out.append(kMagic, 8);
    put_u64(out, m.rows);
    put_u64(out, m.cols);
    for (double v : m.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

void write_activation(const std::string& path, const ActivationMatrix& m) {
    std::string blob = encode_activation(m);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path + "' for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "short write to '" + path + "'");
}

// Reads just the 24-byte record header; used by manifest validation too.
static std::pair<std::uint64_t, std::uint64_t> read_header(std::ifstream& in,
                                                           const std::string& path,
                                                           std::uint64_t offset) {
    unsigned char header[24];
    in.seekg(static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(header), 24);
    if (in.gcount() != 24)
        throw Error(ErrorCode::CorruptHeader, "'" + path + "': truncated header");
    if (std::memcmp(header, kMagic, 8) != 0)
        throw Error(ErrorCode::CorruptHeader, "'" + path + "': bad magic");
    std::uint64_t rows = get_u64(header + 8);
    std::uint64_t cols = get_u64(header + 16);
    if (rows == 0 || cols == 0 || rows > kMaxElements || cols > kMaxElements ||
        rows * cols > kMaxElements)
        throw Error(ErrorCode::CorruptHeader, "'" + path + "': implausible dims");
    return {rows, cols};
}

ActivationMatrix read_activation_at(const std::string& path, std::uint64_t offset,
                                    const ComponentId& component) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open '" + path + "'");
    auto [rows, cols] = read_header(in, path, offset);

    ActivationMatrix m;
    m.component = component;
    m.rows = rows;
    m.cols = cols;
    m.values.resize(rows * cols);
    std::vector<unsigned char> raw(m.values.size() * 8);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw Error(ErrorCode::CorruptHeader, "'" + path + "': truncated payload");
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        m.values[i] = std::bit_cast<double>(get_u64(raw.data() + i * 8));
        if (!std::isfinite(m.values[i]))
            throw Error(ErrorCode::NonFiniteValue, "'" + path + "': non-finite tensor value");
    }
    return m;
}

// ==================== manifest JSON ====================

static const json& require(const json& obj, const char* key, const char* where) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw Error(ErrorCode::SchemaViolation, std::string(where) + " missing field '" + key + "'");
    return *it;
}

static std::string require_string(const json& obj, const char* key, const char* where) {
    const json& v = require(obj, key, where);
    if (!v.is_string())
        throw Error(ErrorCode::SchemaViolation, std::string(where) + " field '" + key + "' must be a string");
    return v.get<std::string>();
}

static ComponentId component_from_json(const json& v, const char* where) {
    if (v.is_string()) return parse_component(v.get<std::string>());
    if (v.is_object())
        return ComponentId{require_string(v, "block", where), parse_role(require_string(v, "role", where))};
    throw Error(ErrorCode::SchemaViolation, std::string(where) + ": component must be a string or object");
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open manifest '" + path + "'");

    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::SchemaViolation, "manifest '" + path + "' is not valid JSON: " + e.what());
    }
    if (!doc.is_object())
        throw Error(ErrorCode::SchemaViolation, "manifest root must be an object");

    DatasetManifest mf;
    mf.base_dir = fs::path(path).parent_path().string();

    const json& version = require(doc, "format_version", "manifest");
    if (!version.is_number_integer() || version.get<int>() != 1)
        throw Error(ErrorCode::SchemaViolation, "unsupported manifest format_version");
    mf.format_version = 1;

    const json& jlayout = require(doc, "layout", "manifest");
    const json& jcomponents = require(jlayout, "components", "layout");
    if (!jcomponents.is_array())
        throw Error(ErrorCode::SchemaViolation, "layout.components must be an array");
    for (const auto& jc : jcomponents) {
        if (!jc.is_object())
            throw Error(ErrorCode::SchemaViolation, "layout component entries must be objects");
        ComponentId id{require_string(jc, "block", "layout component"),
                       parse_role(require_string(jc, "role", "layout component"))};
        CovarianceAxis axis = CovarianceAxis::TEMPORAL;
        if (jc.contains("covariance_axis"))
            axis = parse_covariance_axis(require_string(jc, "covariance_axis", "layout component"));
        mf.layout.components.push_back(id);
        mf.layout.axes.push_back(axis);
    }
    const json& jblocks = require(jlayout, "blocks", "layout");
    if (!jblocks.is_array())
        throw Error(ErrorCode::SchemaViolation, "layout.blocks must be an array");
    for (const auto& jb : jblocks) {
        if (!jb.is_string())
            throw Error(ErrorCode::SchemaViolation, "layout.blocks entries must be strings");
        mf.layout.blocks.push_back(jb.get<std::string>());
    }
    validate_layout(mf.layout);

    const json& jsamples = require(doc, "samples", "manifest");
    if (!jsamples.is_array() || jsamples.empty())
        throw Error(ErrorCode::SchemaViolation, "manifest needs a non-empty samples array");
    std::set<std::string> ids;
    for (const auto& js : jsamples) {
        SampleRecord rec;
        rec.sample_id = require_string(js, "sample_id", "sample");
        rec.class_label = require_string(js, "class_label", "sample");
        if (rec.sample_id.empty() || rec.class_label.empty())
            throw Error(ErrorCode::SchemaViolation, "sample_id and class_label must be non-empty");
        if (js.contains("detector_score")) {
            const json& sc = js["detector_score"];
            if (!sc.is_number())
                throw Error(ErrorCode::SchemaViolation, "detector_score must be numeric");
            rec.detector_score = sc.get<double>();
            if (!std::isfinite(*rec.detector_score))
                throw Error(ErrorCode::SchemaViolation, "detector_score must be finite");
        }
        if (!ids.insert(rec.sample_id).second)
            throw Error(ErrorCode::DuplicateSampleId, "sample '" + rec.sample_id + "' listed twice");
        mf.samples.push_back(std::move(rec));
    }

    const json& jtensors = require(doc, "tensors", "manifest");
    if (!jtensors.is_array())
        throw Error(ErrorCode::SchemaViolation, "manifest.tensors must be an array");
    for (const auto& jt : jtensors) {
        std::string sample = require_string(jt, "sample", "tensor entry");
        ComponentId comp = component_from_json(require(jt, "component", "tensor entry"), "tensor entry");
        TensorRef ref;
        ref.path = require_string(jt, "path", "tensor entry");
        if (jt.contains("offset")) {
            const json& jo = jt["offset"];
            if (!jo.is_number_unsigned() && !(jo.is_number_integer() && jo.get<std::int64_t>() >= 0))
                throw Error(ErrorCode::SchemaViolation, "tensor offset must be a non-negative integer");
            ref.offset = jo.get<std::uint64_t>();
        }
        if (jt.contains("dims")) {
            const json& jd = jt["dims"];
            if (!jd.is_array() || jd.size() != 2 || !jd[0].is_number_unsigned() || !jd[1].is_number_unsigned())
                throw Error(ErrorCode::SchemaViolation, "tensor dims must be [D, N]");
            ref.dims = {jd[0].get<std::uint64_t>(), jd[1].get<std::uint64_t>()};
        }
        if (!ids.count(sample))
            throw Error(ErrorCode::SchemaViolation, "tensor entry references unknown sample '" + sample + "'");
        if (mf.layout.index_of(comp) < 0)
            throw Error(ErrorCode::SchemaViolation, "tensor entry references unknown component " + comp.str());
        if (!mf.tensors.emplace(std::make_pair(sample, comp), ref).second)
            throw Error(ErrorCode::SchemaViolation,
                        "duplicate tensor entry for sample '" + sample + "' component " + comp.str());
    }

    // Resolve every reference now: missing files and mismatched headers must
    // fail at load, not mid-pipeline.
    for (const auto& [key, ref] : mf.tensors) {
        fs::path full = fs::path(mf.base_dir) / ref.path;
        std::ifstream tin(full, std::ios::binary);
        if (!tin)
            throw Error(ErrorCode::DanglingTensorRef,
                        "tensor for sample '" + key.first + "' component " + key.second.str() +
                            " not readable at '" + full.string() + "'");
        std::pair<std::uint64_t, std::uint64_t> dims;
        try {
            dims = read_header(tin, full.string(), ref.offset);
        } catch (const Error& e) {
            throw Error(ErrorCode::SchemaViolation, std::string("tensor header invalid: ") + e.what());
        }
        if (ref.dims && *ref.dims != dims)
            throw Error(ErrorCode::SchemaViolation,
                        "tensor header for sample '" + key.first + "' component " + key.second.str() +
                            " disagrees with manifest dims");
    }
    return mf;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    ordered_json doc;
    doc["format_version"] = 1;
    ordered_json jlayout;
    jlayout["components"] = ordered_json::array();
    for (std::size_t i = 0; i < manifest.layout.components.size(); ++i) {
        const auto& c = manifest.layout.components[i];
        ordered_json jc;
        jc["block"] = c.block;
        jc["role"] = role_name(c.role);
        jc["covariance_axis"] = covariance_axis_name(manifest.layout.axes[i]);
        jlayout["components"].push_back(jc);
    }
    jlayout["blocks"] = manifest.layout.blocks;
    doc["layout"] = jlayout;

    doc["samples"] = ordered_json::array();
    for (const auto& s : manifest.samples) {
        ordered_json js;
        js["sample_id"] = s.sample_id;
        js["class_label"] = s.class_label;
        if (s.detector_score) js["detector_score"] = *s.detector_score;
        doc["samples"].push_back(js);
    }

    doc["tensors"] = ordered_json::array();
    for (const auto& [key, ref] : manifest.tensors) {
        ordered_json jt;
        jt["sample"] = key.first;
        jt["component"] = key.second.str();
        jt["path"] = ref.path;
        jt["offset"] = ref.offset;
        if (ref.dims) jt["dims"] = {ref.dims->first, ref.dims->second};
        doc["tensors"].push_back(jt);
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path + "' for writing");
    out << doc.dump(2) << "\n";
    if (!out) throw Error(ErrorCode::IoFailure, "short write to '" + path + "'");
}

ActivationMatrix read_activation(const DatasetManifest& manifest,
                                 const std::string& sample_id,
                                 const ComponentId& component) {
    auto it = manifest.tensors.find({sample_id, component});
    if (it == manifest.tensors.end())
        throw Error(ErrorCode::NotFound,
                    "no tensor for sample '" + sample_id + "' component " + component.str());
    fs::path full = fs::path(manifest.base_dir) / it->second.path;
    ActivationMatrix m = read_activation_at(full.string(), it->second.offset, component);
    if (it->second.dims &&
        (it->second.dims->first != m.rows || it->second.dims->second != m.cols))
        throw Error(ErrorCode::SchemaViolation, "tensor dims changed since manifest load");
    return m;
}

void persist_dataset(const ActivationSource& source, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "tensors");

    DatasetManifest mf;
    mf.layout = source.layout();
    mf.samples = source.samples();
    mf.base_dir = dir;

    const std::string blob_rel = "tensors/data.blns";
    fs::path blob_path = fs::path(dir) / blob_rel;
    std::ofstream blob(blob_path, std::ios::binary);
    if (!blob) throw Error(ErrorCode::IoFailure, "cannot open '" + blob_path.string() + "' for writing");

    std::uint64_t offset = 0;
    for (const auto& s : mf.samples) {
        for (const auto& c : mf.layout.components) {
            ActivationMatrix m = source.fetch(s.sample_id, c);
            std::string rec = encode_activation(m);
            blob.write(rec.data(), static_cast<std::streamsize>(rec.size()));
            if (!blob) throw Error(ErrorCode::IoFailure, "short write to tensor blob");
            TensorRef ref;
            ref.path = blob_rel;
            ref.offset = offset;
            ref.dims = {m.rows, m.cols};
            mf.tensors[{s.sample_id, c}] = ref;
            offset += rec.size();
        }
    }
    blob.close();
    save_manifest(mf, (fs::path(dir) / "manifest.json").string());
}

}  // namespace branchlens
