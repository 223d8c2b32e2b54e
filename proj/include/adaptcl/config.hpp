#pragma once

#include <map>
#include <string>
#include <vector>

#include "adaptcl/cil.hpp"

namespace adaptcl {

// Parses adapter placement keys from config text: "none", "all", "a-b"
// (1-indexed, inclusive) or a comma list of 1-indexed block numbers.
std::vector<std::size_t> parse_blocks(const std::string& token, std::size_t num_blocks);

// Parses "none" or a '+'-joined subset of {mlp, atten, all}.
std::vector<AdapterKind> parse_kinds(const std::string& token);

// A run configuration: sectioned key=value text (encoder, adapters, recipe,
// data, protocol), plus "section.key=value" overrides. Unknown keys are
// rejected. The fingerprint is the SHA-256 of the canonicalized effective
// config, so a report plus (fingerprint, seed) pins the exact experiment.
struct RunConfig {
    ProtocolSpec spec;
    std::string fingerprint;
    std::map<std::string, std::map<std::string, std::string>> entries; // effective values
};

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {});

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

// The text that gets fingerprinted: every effective key as
// "section.key=value", sorted, one per line.
std::string canonical_config_text(
    const std::map<std::string, std::map<std::string, std::string>>& entries);

} // namespace adaptcl
