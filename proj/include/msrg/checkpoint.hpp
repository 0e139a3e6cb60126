#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrg/tensor.hpp"

namespace msrg {

// Ordered name -> tensor map; the unit of checkpointing and merging.
// Iteration order is insertion order and is also serialization order.
class ParameterMap {
public:
    std::string kind;          // model kind tag ("encoder", "head", "surgery", ...)
    int64_t feature_dim = 0;   // k
    int64_t layer_count = 0;   // L

    void add(std::string name, Tensor tensor);
    bool has(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;

    size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    Tensor& tensor(size_t i) { return tensors_[i]; }
    const Tensor& tensor(size_t i) const { return tensors_[i]; }
    const std::string& name(size_t i) const { return names_[i]; }

    int64_t total_params() const;

private:
    int64_t index_of(const std::string& name) const;

    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
};

// Binary checkpoint layout (all integers little-endian):
//   bytes 0..3   magic "MSRG"
//   bytes 4..7   format version (u32) = 1
//   bytes 8..15  header length in bytes (u64)
//   header       JSON: tensor name -> {dtype:"f32", shape, offset, nbytes},
//                plus a reserved "__metadata__" entry for the map metadata;
//                offsets are relative to the payload start
//   payload      raw little-endian float32 data
void save_checkpoint(const ParameterMap& map, const std::string& path);
ParameterMap load_checkpoint(const std::string& path);

inline constexpr uint32_t kCheckpointVersion = 1;

// Returns true when the two maps have identical name sets and per-name
// shapes. On failure `why` (if given) lists the offending layers.
bool merge_compatible(const ParameterMap& a, const ParameterMap& b, std::string* why = nullptr);

// Throws IncompatibleError listing offending layers unless every map is
// merge-compatible with the first. Requires at least two maps.
void assert_compatible(const std::vector<const ParameterMap*>& maps);

// FNV-1a over names, shapes and raw tensor bytes; used for frozen-weight
// assertions and manifest entries.
uint64_t checksum(const ParameterMap& map);
uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace msrg
