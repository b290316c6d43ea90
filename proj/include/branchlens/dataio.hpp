#pragma once

// Dataset contract: component layout, sample records, and the activation
// tensor container plus its on-disk form.
//
// Tensor wire format (little-endian):
//   bytes 0..7   magic "BLNS0001"
//   bytes 8..15  D (rows) as u64
//   bytes 16..23 N (cols) as u64
//   then D*N IEEE-754 doubles, row-major
//
// A dataset manifest is a UTF-8 JSON file indexing samples and their
// per-component tensors; tensor paths are resolved relative to the manifest.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "branchlens/errors.hpp"

namespace branchlens {

enum class Role { HSGAL1, HSGAL2, POOL, GLOBAL };
enum class CovarianceAxis { TEMPORAL, CROSS_SAMPLE };

const char* role_name(Role role);
Role parse_role(const std::string& name);
const char* covariance_axis_name(CovarianceAxis axis);
CovarianceAxis parse_covariance_axis(const std::string& name);

struct ComponentId {
    std::string block;
    Role role;

    bool operator==(const ComponentId& o) const { return block == o.block && role == o.role; }
    bool operator<(const ComponentId& o) const {
        return std::tie(block, role) < std::tie(o.block, o.role);
    }
    std::string str() const { return block + "/" + role_name(role); }
};

ComponentId parse_component(const std::string& text);

// Ordered component list; the order fixes meta-feature concatenation.
struct Layout {
    std::vector<ComponentId> components;
    std::vector<CovarianceAxis> axes;  // parallel to components
    std::vector<std::string> blocks;

    int index_of(const ComponentId& id) const;  // -1 when absent
    std::vector<int> components_of_block(const std::string& block) const;
    bool has_block(const std::string& block) const;
};

// 4 branches x {HSGAL1, HSGAL2, POOL} plus the two global attention taps.
Layout canonical_layout();

struct SampleRecord {
    std::string sample_id;
    std::string class_label;
    std::optional<double> detector_score;
};

struct ActivationMatrix {
    ComponentId component;
    std::size_t rows = 0;  // D
    std::size_t cols = 0;  // N
    std::vector<double> values;  // row-major, rows*cols

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

struct TensorRef {
    std::string path;           // relative to the manifest directory
    std::uint64_t offset = 0;   // byte offset of the tensor record
    std::optional<std::pair<std::uint64_t, std::uint64_t>> dims;  // declared (D, N)
};

struct DatasetManifest {
    int format_version = 1;
    Layout layout;
    std::vector<SampleRecord> samples;
    std::map<std::pair<std::string, ComponentId>, TensorRef> tensors;
    std::string base_dir;  // directory of the manifest file

    const SampleRecord* find_sample(const std::string& sample_id) const;
};

// ==================== tensor files ====================

// Serialized record bytes (magic + dims + payload); write_activation emits
// exactly this, so equal matrices produce identical files.
std::string encode_activation(const ActivationMatrix& m);

void write_activation(const std::string& path, const ActivationMatrix& m);
ActivationMatrix read_activation_at(const std::string& path, std::uint64_t offset,
                                    const ComponentId& component);

// ==================== manifest ====================

// Parses and eagerly validates: unique ids, known components, every tensor
// reference resolving to a readable header that matches declared dims.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

ActivationMatrix read_activation(const DatasetManifest& manifest,
                                 const std::string& sample_id,
                                 const ComponentId& component);

// ==================== dataset abstraction ====================

// Uniform access for the pipeline: disk-backed or in-memory datasets.
class ActivationSource {
public:
    virtual ~ActivationSource() = default;
    virtual const Layout& layout() const = 0;
    virtual const std::vector<SampleRecord>& samples() const = 0;
    // Must be safe to call from several threads at once.
    virtual ActivationMatrix fetch(const std::string& sample_id,
                                   const ComponentId& component) const = 0;
};

class ManifestSource : public ActivationSource {
public:
    explicit ManifestSource(DatasetManifest manifest) : manifest_(std::move(manifest)) {}
    const Layout& layout() const override { return manifest_.layout; }
    const std::vector<SampleRecord>& samples() const override { return manifest_.samples; }
    ActivationMatrix fetch(const std::string& sample_id,
                           const ComponentId& component) const override {
        return read_activation(manifest_, sample_id, component);
    }
    const DatasetManifest& manifest() const { return manifest_; }

private:
    DatasetManifest manifest_;
};

class MemorySource : public ActivationSource {
public:
    MemorySource(Layout layout, std::vector<SampleRecord> samples)
        : layout_(std::move(layout)), samples_(std::move(samples)) {
        tensors_.resize(samples_.size() * layout_.components.size());
        for (std::size_t i = 0; i < samples_.size(); ++i)
            sample_index_[samples_[i].sample_id] = i;
    }

    const Layout& layout() const override { return layout_; }
    const std::vector<SampleRecord>& samples() const override { return samples_; }

    void put(const std::string& sample_id, const ComponentId& component, ActivationMatrix m) {
        tensors_[slot(sample_id, component)] = std::move(m);
    }
    ActivationMatrix fetch(const std::string& sample_id,
                           const ComponentId& component) const override {
        return tensors_[slot(sample_id, component)];
    }

private:
    std::size_t slot(const std::string& sample_id, const ComponentId& component) const {
        auto it = sample_index_.find(sample_id);
        if (it == sample_index_.end())
            throw Error(ErrorCode::NotFound, "unknown sample '" + sample_id + "'");
        int ci = layout_.index_of(component);
        if (ci < 0)
            throw Error(ErrorCode::NotFound, "unknown component " + component.str());
        return it->second * layout_.components.size() + static_cast<std::size_t>(ci);
    }

    Layout layout_;
    std::vector<SampleRecord> samples_;
    std::vector<ActivationMatrix> tensors_;
    std::map<std::string, std::size_t> sample_index_;
};

// Writes manifest.json plus one packed tensor blob under dir; the result can
// be re-read with load_manifest.
void persist_dataset(const ActivationSource& source, const std::string& dir);

}  // namespace branchlens
