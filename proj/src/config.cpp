#include "adaptcl/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "adaptcl/error.hpp"
#include "adaptcl/sha256.hpp"

namespace adaptcl {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"encoder",
         {"image_size", "patch_size", "channels", "embed_dim", "num_blocks", "num_heads",
          "mlp_ratio", "pooling"}},
        {"adapters", {"blocks", "kinds", "bottleneck", "alpha"}},
        {"recipe", {"epochs", "lr0", "weight_decay", "batch_size", "temperature"}},
        {"data",
         {"source", "num_classes", "samples_per_class", "noise_std", "mean_spread", "raw_dir",
          "manifest"}},
        {"protocol", {"base_classes", "steps", "classes_per_step", "step_list", "imbalance"}},
    };
    return keys;
}

std::size_t to_size(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size() || x < 0) throw std::invalid_argument(v);
        return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
}

double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::vector<std::size_t> to_size_list(const std::string& v, const std::string& key) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos <= v.size()) {
        const auto comma = v.find(',', pos);
        const auto end = comma == std::string::npos ? v.size() : comma;
        const std::string item = trim(v.substr(pos, end - pos));
        if (!item.empty()) out.push_back(to_size(item, key));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) {
        throw ConfigError(key + ": expected a comma list of integers, got '" + v + "'");
    }
    return out;
}

} // namespace

std::vector<std::size_t> parse_blocks(const std::string& token, std::size_t num_blocks) {
    if (token == "none") return {};
    std::vector<std::size_t> blocks;
    if (token == "all") {
        for (std::size_t b = 0; b < num_blocks; ++b) blocks.push_back(b);
        return blocks;
    }
    const auto dash = token.find('-');
    if (dash != std::string::npos && token.find(',') == std::string::npos) {
        const std::size_t lo = to_size(token.substr(0, dash), "adapters.blocks");
        const std::size_t hi = to_size(token.substr(dash + 1), "adapters.blocks");
        if (lo < 1 || hi < lo || hi > num_blocks) {
            throw ConfigError("adapters.blocks: range '" + token + "' invalid for " +
                              std::to_string(num_blocks) + " blocks");
        }
        for (std::size_t b = lo; b <= hi; ++b) blocks.push_back(b - 1);
        return blocks;
    }
    for (std::size_t b : to_size_list(token, "adapters.blocks")) {
        if (b < 1 || b > num_blocks) {
            throw ConfigError("adapters.blocks: block " + std::to_string(b) +
                              " outside 1.." + std::to_string(num_blocks));
        }
        blocks.push_back(b - 1);
    }
    std::sort(blocks.begin(), blocks.end());
    blocks.erase(std::unique(blocks.begin(), blocks.end()), blocks.end());
    return blocks;
}

std::vector<AdapterKind> parse_kinds(const std::string& token) {
    if (token == "none") return {};
    std::vector<AdapterKind> kinds;
    std::size_t pos = 0;
    while (pos <= token.size()) {
        const auto plus = token.find('+', pos);
        const auto end = plus == std::string::npos ? token.size() : plus;
        const std::string item = trim(token.substr(pos, end - pos));
        if (item == "mlp") {
            kinds.push_back(AdapterKind::AdaptMLP);
        } else if (item == "atten") {
            kinds.push_back(AdapterKind::AdaptAtten);
        } else if (item == "all") {
            kinds.push_back(AdapterKind::AdaptAll);
        } else {
            throw ConfigError("adapters.kinds: unknown kind '" + item + "'");
        }
        if (plus == std::string::npos) break;
        pos = plus + 1;
    }
    return kinds;
}

std::string canonical_config_text(
    const std::map<std::string, std::map<std::string, std::string>>& entries) {
    std::ostringstream os;
    for (const auto& [section, kv] : entries) {
        for (const auto& [key, value] : kv) {
            os << section << '.' << key << '=' << value << '\n';
        }
    }
    return os.str();
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
    std::map<std::string, std::map<std::string, std::string>> entries;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (known_keys().find(section) == known_keys().end()) {
                throw ConfigError("unknown config section '" + section + "'");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key=value, got '" + line + "'");
        }
        if (section.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": key outside any [section]");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (known_keys().at(section).find(key) == known_keys().at(section).end()) {
            throw ConfigError("unknown config key '" + section + "." + key + "'");
        }
        entries[section][key] = value;
    }

    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        const auto dot = ov.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
            throw ConfigError("override '" + ov + "' must look like section.key=value");
        }
        const std::string sec = trim(ov.substr(0, dot));
        const std::string key = trim(ov.substr(dot + 1, eq - dot - 1));
        const std::string value = trim(ov.substr(eq + 1));
        auto kit = known_keys().find(sec);
        if (kit == known_keys().end() || kit->second.find(key) == kit->second.end()) {
            throw ConfigError("unknown config key '" + sec + "." + key + "'");
        }
        entries[sec][key] = value;
    }

    auto get = [&](const std::string& sec, const std::string& key,
                   const std::string& fallback) -> std::string {
        auto sit = entries.find(sec);
        if (sit == entries.end()) return fallback;
        auto it = sit->second.find(key);
        return it == sit->second.end() ? fallback : it->second;
    };

    RunConfig cfg;
    ProtocolSpec& spec = cfg.spec;

    spec.encoder.image_size = to_size(get("encoder", "image_size", "16"), "encoder.image_size");
    spec.encoder.patch_size = to_size(get("encoder", "patch_size", "4"), "encoder.patch_size");
    spec.encoder.channels = to_size(get("encoder", "channels", "1"), "encoder.channels");
    spec.encoder.embed_dim = to_size(get("encoder", "embed_dim", "32"), "encoder.embed_dim");
    spec.encoder.num_blocks = to_size(get("encoder", "num_blocks", "2"), "encoder.num_blocks");
    spec.encoder.num_heads = to_size(get("encoder", "num_heads", "4"), "encoder.num_heads");
    spec.encoder.mlp_ratio = to_double(get("encoder", "mlp_ratio", "2.0"), "encoder.mlp_ratio");
    const std::string pooling = get("encoder", "pooling", "mean");
    if (pooling == "mean") {
        spec.encoder.pooling = EncoderConfig::Pooling::mean;
    } else if (pooling == "cls_token") {
        spec.encoder.pooling = EncoderConfig::Pooling::cls_token;
    } else {
        throw ConfigError("encoder.pooling: expected mean or cls_token, got '" + pooling + "'");
    }

    spec.adapter_blocks = parse_blocks(get("adapters", "blocks", "all"), spec.encoder.num_blocks);
    spec.adapter_kinds = parse_kinds(get("adapters", "kinds", "mlp"));
    spec.bottleneck = to_size(get("adapters", "bottleneck", "64"), "adapters.bottleneck");
    spec.alpha = to_double(get("adapters", "alpha", "0.1"), "adapters.alpha");

    spec.recipe.epochs = to_size(get("recipe", "epochs", "20"), "recipe.epochs");
    spec.recipe.lr0 = to_double(get("recipe", "lr0", "0.01"), "recipe.lr0");
    spec.recipe.weight_decay =
        to_double(get("recipe", "weight_decay", "0.0005"), "recipe.weight_decay");
    spec.recipe.batch_size = to_size(get("recipe", "batch_size", "64"), "recipe.batch_size");
    spec.recipe.temperature =
        to_double(get("recipe", "temperature", "0.07"), "recipe.temperature");
    spec.recipe.bottleneck = spec.bottleneck;

    const std::string source = get("data", "source", "synthetic");
    if (source == "synthetic") {
        spec.data.source = DatasetSpec::Source::synthetic;
    } else if (source == "raw_dir") {
        spec.data.source = DatasetSpec::Source::raw_dir;
    } else {
        throw ConfigError("data.source: expected synthetic or raw_dir, got '" + source + "'");
    }
    spec.data.num_classes = to_size(get("data", "num_classes", "10"), "data.num_classes");
    spec.data.samples_per_class =
        to_size(get("data", "samples_per_class", "50"), "data.samples_per_class");
    spec.data.noise_std = to_double(get("data", "noise_std", "0.02"), "data.noise_std");
    spec.data.mean_spread = to_double(get("data", "mean_spread", "0.3"), "data.mean_spread");
    spec.data.raw_dir = get("data", "raw_dir", "");
    spec.data.manifest = get("data", "manifest", "manifest.tsv");
    spec.data.geometry = ImageGeometry{spec.encoder.channels, spec.encoder.image_size,
                                       spec.encoder.image_size};

    spec.plan.base_classes = to_size(get("protocol", "base_classes", "0"), "protocol.base_classes");
    const std::string step_list = get("protocol", "step_list", "");
    if (!step_list.empty()) {
        spec.plan.step_classes = to_size_list(step_list, "protocol.step_list");
    } else {
        const std::size_t steps = to_size(get("protocol", "steps", "5"), "protocol.steps");
        const std::size_t per =
            to_size(get("protocol", "classes_per_step", "2"), "protocol.classes_per_step");
        if (steps == 0 || per == 0) {
            throw ConfigError("protocol.steps and protocol.classes_per_step must be positive");
        }
        spec.plan.step_classes.assign(steps, per);
    }
    spec.imbalance = to_double(get("protocol", "imbalance", "1"), "protocol.imbalance");

    spec.validate();

    // Effective configuration, all keys explicit, drives the fingerprint.
    std::map<std::string, std::map<std::string, std::string>> eff;
    eff["encoder"]["image_size"] = std::to_string(spec.encoder.image_size);
    eff["encoder"]["patch_size"] = std::to_string(spec.encoder.patch_size);
    eff["encoder"]["channels"] = std::to_string(spec.encoder.channels);
    eff["encoder"]["embed_dim"] = std::to_string(spec.encoder.embed_dim);
    eff["encoder"]["num_blocks"] = std::to_string(spec.encoder.num_blocks);
    eff["encoder"]["num_heads"] = std::to_string(spec.encoder.num_heads);
    eff["encoder"]["mlp_ratio"] = fmt_double(spec.encoder.mlp_ratio);
    eff["encoder"]["pooling"] = pooling;
    {
        std::ostringstream blocks;
        for (std::size_t i = 0; i < spec.adapter_blocks.size(); ++i) {
            if (i) blocks << ',';
            blocks << spec.adapter_blocks[i] + 1;
        }
        eff["adapters"]["blocks"] = spec.adapter_blocks.empty() ? "none" : blocks.str();
        std::ostringstream kinds;
        for (std::size_t i = 0; i < spec.adapter_kinds.size(); ++i) {
            if (i) kinds << '+';
            kinds << kind_name(spec.adapter_kinds[i]);
        }
        eff["adapters"]["kinds"] = spec.adapter_kinds.empty() ? "none" : kinds.str();
    }
    eff["adapters"]["bottleneck"] = std::to_string(spec.bottleneck);
    eff["adapters"]["alpha"] = fmt_double(spec.alpha);
    eff["recipe"]["epochs"] = std::to_string(spec.recipe.epochs);
    eff["recipe"]["lr0"] = fmt_double(spec.recipe.lr0);
    eff["recipe"]["weight_decay"] = fmt_double(spec.recipe.weight_decay);
    eff["recipe"]["batch_size"] = std::to_string(spec.recipe.batch_size);
    eff["recipe"]["temperature"] = fmt_double(spec.recipe.temperature);
    eff["data"]["source"] = source;
    eff["data"]["num_classes"] = std::to_string(spec.data.num_classes);
    eff["data"]["samples_per_class"] = std::to_string(spec.data.samples_per_class);
    eff["data"]["noise_std"] = fmt_double(spec.data.noise_std);
    eff["data"]["mean_spread"] = fmt_double(spec.data.mean_spread);
    eff["data"]["raw_dir"] = spec.data.raw_dir;
    eff["data"]["manifest"] = spec.data.manifest;
    eff["protocol"]["base_classes"] = std::to_string(spec.plan.base_classes);
    {
        std::ostringstream sl;
        for (std::size_t i = 0; i < spec.plan.step_classes.size(); ++i) {
            if (i) sl << ',';
            sl << spec.plan.step_classes[i];
        }
        eff["protocol"]["step_list"] = sl.str();
    }
    eff["protocol"]["imbalance"] = fmt_double(spec.imbalance);

    cfg.entries = std::move(eff);
    cfg.fingerprint = sha256_hex(canonical_config_text(cfg.entries));
    return cfg;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_run_config(text, overrides);
}

} // namespace adaptcl
