#include "adaptcl/serialize.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>

namespace adaptcl {

namespace {

constexpr char kMagic[4] = {'S', 'I', 'M', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u32(buf, bits);
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    std::uint32_t u32(const std::string& field) {
        if (pos_ + 4 > bytes_.size()) {
            throw FormatError(path_ + ": truncated while reading " + field);
        }
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_ + static_cast<std::size_t>(i)]);
        }
        pos_ += 4;
        return v;
    }

    float f32(const std::string& field) {
        const std::uint32_t bits = u32(field);
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    std::string str(std::size_t len, const std::string& field) {
        if (pos_ + len > bytes_.size()) {
            throw FormatError(path_ + ": truncated while reading " + field);
        }
        std::string s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

} // namespace

void write_siml(const std::string& path, std::vector<TensorRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const TensorRecord& a, const TensorRecord& b) { return a.name < b.name; });
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].name == records[i - 1].name) {
            throw FormatError("duplicate record name '" + records[i].name + "'");
        }
    }
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(records.size()));
    for (const auto& rec : records) {
        std::size_t numel = 1;
        for (std::uint32_t d : rec.dims) numel *= d;
        if (numel != rec.data.size()) {
            throw FormatError("record '" + rec.name + "' data length " +
                              std::to_string(rec.data.size()) + " does not match its dims");
        }
        put_u32(buf, static_cast<std::uint32_t>(rec.name.size()));
        buf.append(rec.name);
        put_u32(buf, static_cast<std::uint32_t>(rec.dims.size()));
        for (std::uint32_t d : rec.dims) put_u32(buf, d);
        for (float v : rec.data) put_f32(buf, v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open '" + path + "' for writing");
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) {
        throw FormatError("write failed for '" + path + "'");
    }
}

std::vector<TensorRecord> read_siml(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path + "' for reading");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(bytes, path);

    const std::string magic = r.str(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw FormatError(path + ": bad magic bytes, expected \"SIML\"");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError(path + ": unsupported version " + std::to_string(version) +
                          ", expected " + std::to_string(kVersion));
    }
    const std::uint32_t count = r.u32("record count");
    std::vector<TensorRecord> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorRecord rec;
        const std::uint32_t name_len = r.u32("name length");
        rec.name = r.str(name_len, "record name");
        const std::uint32_t rank = r.u32("rank of '" + rec.name + "'");
        if (rank == 0 || rank > 8) {
            throw FormatError(path + ": record '" + rec.name + "' has invalid rank " +
                              std::to_string(rank));
        }
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = r.u32("dims of '" + rec.name + "'");
            if (dim == 0) {
                throw FormatError(path + ": record '" + rec.name + "' has a zero dimension");
            }
            rec.dims.push_back(dim);
            numel *= dim;
        }
        rec.data.reserve(numel);
        for (std::size_t e = 0; e < numel; ++e) {
            rec.data.push_back(r.f32("data of '" + rec.name + "'"));
        }
        records.push_back(std::move(rec));
    }
    if (!r.at_end()) {
        throw FormatError(path + ": trailing bytes after last record");
    }
    return records;
}

std::map<std::string, TensorRecord> index_records(std::vector<TensorRecord> records) {
    std::map<std::string, TensorRecord> map;
    for (auto& rec : records) {
        auto name = rec.name;
        if (!map.emplace(name, std::move(rec)).second) {
            throw FormatError("duplicate record name '" + name + "'");
        }
    }
    return map;
}

} // namespace adaptcl
