#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neuralbeta/tensor.hpp"

namespace neuralbeta {

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

// Ordered collection of learnable leaves. Order is insertion order and is
// what checkpoints and optimiser state are keyed on.
class ParameterSet {
public:
    ad::Tensor& add(std::string name, ad::Tensor tensor);

    const std::vector<NamedTensor>& items() const { return items_; }
    std::vector<NamedTensor>& items() { return items_; }
    std::size_t size() const { return items_.size(); }

    const ad::Tensor& get(const std::string& name) const;
    ad::Tensor& get(const std::string& name);
    bool contains(const std::string& name) const;

    std::size_t total_numel() const;
    void zero_grad();

    std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& values);

private:
    std::vector<NamedTensor> items_;
};

// On-disk checkpoint: a metadata string (JSON by convention) plus a flat map
// name -> shape -> little-endian float64 values. Layout is documented in
// docs/formats.md.
struct StoredArray {
    std::string name;
    ad::Shape shape;
    std::vector<double> values;
};

struct StoredCheckpoint {
    std::uint32_t version = 0;
    std::string metadata;
    std::vector<StoredArray> arrays;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const std::string& metadata);
StoredCheckpoint read_checkpoint(const std::filesystem::path& path);

// Copies stored values into `params`; names and shapes must match exactly.
void load_into(ParameterSet& params, const StoredCheckpoint& stored);

}  // namespace neuralbeta
