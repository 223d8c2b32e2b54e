#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adaptcl/error.hpp"
#include "adaptcl/tensor.hpp"

namespace adaptcl {

// One named tensor inside a SIML container. Data is always f32 on disk,
// little-endian, row-major.
struct TensorRecord {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

// SIML container: magic "SIML", u32 version = 1, u32 record count, then
// records {u32 name length, name bytes, u32 rank, u32 dims[rank],
// f32 data[prod(dims)]}. Writers emit records sorted by name.
void write_siml(const std::string& path, std::vector<TensorRecord> records);

// Parses the full file before returning; a malformed or truncated file
// throws FormatError and yields no partial result.
std::vector<TensorRecord> read_siml(const std::string& path);

// Name-keyed view over a record list. Throws FormatError on duplicates.
std::map<std::string, TensorRecord> index_records(std::vector<TensorRecord> records);

template <typename Real>
TensorRecord to_record(const std::string& name, const TensorT<Real>& t) {
    TensorRecord rec;
    rec.name = name;
    for (std::size_t d : t.shape()) rec.dims.push_back(static_cast<std::uint32_t>(d));
    rec.data.reserve(t.size());
    for (Real v : t.data()) rec.data.push_back(static_cast<float>(v));
    return rec;
}

template <typename Real>
TensorT<Real> from_record(const TensorRecord& rec) {
    std::vector<std::size_t> shape;
    for (std::uint32_t d : rec.dims) shape.push_back(d);
    std::vector<Real> data(rec.data.begin(), rec.data.end());
    return TensorT<Real>::from_data(std::move(shape), std::move(data));
}

// Copies a record's payload into an existing tensor, checking shape.
// Mismatches report both the expected and the stored dimensions.
template <typename Real>
void load_into(const TensorRecord& rec, TensorT<Real>& dst) {
    std::vector<std::size_t> stored;
    for (std::uint32_t d : rec.dims) stored.push_back(d);
    if (stored != dst.shape()) {
        throw FormatError("record '" + rec.name + "' has dims " + detail::shape_str(stored) +
                          " but the configuration expects " + detail::shape_str(dst.shape()));
    }
    for (std::size_t i = 0; i < rec.data.size(); ++i) dst.at(i) = static_cast<Real>(rec.data[i]);
}

} // namespace adaptcl
