#include "neuralbeta/parameters.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace neuralbeta {

namespace {

constexpr char kMagic[8] = {'N', 'B', 'E', 'T', 'A', 'C', 'K', 'P'};

template <typename T>
T to_little_endian(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        std::reverse(bytes, bytes + sizeof(T));
        std::memcpy(&v, bytes, sizeof(T));
    }
    return v;
}

template <typename T>
void put(std::ostream& os, T v) {
    v = to_little_endian(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated checkpoint " + path.string());
    return to_little_endian(v);
}

std::string get_string(std::istream& is, std::uint64_t len, const std::filesystem::path& path) {
    if (len > (std::uint64_t{1} << 32)) throw IoError("corrupt checkpoint " + path.string());
    std::string s(len, '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("truncated checkpoint " + path.string());
    return s;
}

}  // namespace

ad::Tensor& ParameterSet::add(std::string name, ad::Tensor tensor) {
    if (contains(name)) throw ContractError("duplicate parameter name " + name);
    if (!tensor.requires_grad()) {
        tensor = ad::Tensor::from(tensor.shape(), {tensor.data().begin(), tensor.data().end()}, true);
    }
    items_.push_back({std::move(name), std::move(tensor)});
    return items_.back().tensor;
}

const ad::Tensor& ParameterSet::get(const std::string& name) const {
    for (const auto& item : items_) {
        if (item.name == name) return item.tensor;
    }
    throw ContractError("unknown parameter " + name);
}

ad::Tensor& ParameterSet::get(const std::string& name) {
    return const_cast<ad::Tensor&>(std::as_const(*this).get(name));
}

bool ParameterSet::contains(const std::string& name) const {
    return std::any_of(items_.begin(), items_.end(), [&](const NamedTensor& t) { return t.name == name; });
}

std::size_t ParameterSet::total_numel() const {
    std::size_t n = 0;
    for (const auto& item : items_) n += item.tensor.numel();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& item : items_) item.tensor.zero_grad();
}

std::vector<std::vector<double>> ParameterSet::snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(items_.size());
    for (const auto& item : items_) out.emplace_back(item.tensor.data().begin(), item.tensor.data().end());
    return out;
}

void ParameterSet::restore(const std::vector<std::vector<double>>& values) {
    if (values.size() != items_.size()) throw ContractError("snapshot size does not match parameter set");
    for (std::size_t i = 0; i < items_.size(); ++i) {
        auto dst = items_[i].tensor.mutable_data();
        if (values[i].size() != dst.size()) throw ContractError("snapshot shape mismatch for " + items_[i].name);
        std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
}

void write_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const std::string& metadata) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, metadata.size());
    os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    put<std::uint64_t>(os, params.size());
    for (const auto& item : params.items()) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(item.name.size()));
        os.write(item.name.data(), static_cast<std::streamsize>(item.name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(item.tensor.rank()));
        for (std::size_t d : item.tensor.shape()) put<std::uint64_t>(os, d);
        for (double v : item.tensor.data()) put<double>(os, v);
    }
    if (!os) throw IoError("failed writing " + path.string());
}

StoredCheckpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError(path.string() + " is not a checkpoint file");
    }
    StoredCheckpoint out;
    out.version = get<std::uint32_t>(is, path);
    if (out.version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(out.version));
    }
    out.metadata = get_string(is, get<std::uint64_t>(is, path), path);
    const auto count = get<std::uint64_t>(is, path);
    for (std::uint64_t i = 0; i < count; ++i) {
        StoredArray arr;
        arr.name = get_string(is, get<std::uint32_t>(is, path), path);
        const auto rank = get<std::uint32_t>(is, path);
        for (std::uint32_t k = 0; k < rank; ++k) arr.shape.push_back(get<std::uint64_t>(is, path));
        arr.values.resize(ad::shape_numel(arr.shape));
        for (double& v : arr.values) v = get<double>(is, path);
        out.arrays.push_back(std::move(arr));
    }
    return out;
}

void load_into(ParameterSet& params, const StoredCheckpoint& stored) {
    if (stored.arrays.size() != params.size()) {
        throw DataError("checkpoint holds " + std::to_string(stored.arrays.size()) + " arrays, model expects " +
                        std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& item = params.items()[i];
        const auto& arr = stored.arrays[i];
        if (arr.name != item.name || arr.shape != item.tensor.shape()) {
            throw DataError("checkpoint array " + arr.name + ad::shape_str(arr.shape) + " does not match parameter " +
                            item.name + ad::shape_str(item.tensor.shape()));
        }
        std::copy(arr.values.begin(), arr.values.end(), item.tensor.mutable_data().begin());
    }
}

}  // namespace neuralbeta
