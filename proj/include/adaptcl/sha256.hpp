#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace adaptcl {

// Streaming SHA-256 producing lowercase hex digests. Backed by OpenSSL's
// libcrypto; used for config fingerprints and parameter checksums.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }

    template <typename T>
    void update_values(const std::vector<T>& v) {
        update(v.data(), v.size() * sizeof(T));
    }

    // Finalizes and returns the digest; the object must not be reused after.
    std::string hex_digest();

private:
    void* ctx_;
};

std::string sha256_hex(const std::string& data);

} // namespace adaptcl
