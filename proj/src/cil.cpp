#include "adaptcl/cil.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <map>
#include <numeric>

#include "adaptcl/error.hpp"
#include "adaptcl/rng.hpp"
#include "adaptcl/sha256.hpp"

namespace adaptcl {

namespace {

constexpr std::size_t kEvalChunk = 128;

void require_frozen(EncoderStateT<float>& encoder, const char* where) {
    for (auto& [name, t] : encoder.named_parameters()) {
        if (t->requires_grad()) {
            throw ContractError(std::string(where) + ": encoder parameter '" + name +
                                "' is trainable; the encoder must be frozen");
        }
    }
}

std::vector<std::vector<float>> standardized_images(const std::vector<Sample>& samples,
                                                    const std::vector<std::size_t>& idx) {
    std::vector<std::vector<float>> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        out.push_back(standardize(samples[i].pixels));
    }
    return out;
}

// Local label index of each sample within an ascending class-id list.
std::vector<int> local_labels(const std::vector<Sample>& samples,
                              const std::vector<std::size_t>& idx,
                              const std::vector<int>& class_ids) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        const auto it = std::find(class_ids.begin(), class_ids.end(), samples[i].label);
        if (it == class_ids.end()) {
            throw ContractError("sample label " + std::to_string(samples[i].label) +
                                " not among the task's classes");
        }
        out.push_back(static_cast<int>(it - class_ids.begin()));
    }
    return out;
}

struct ParamSlot {
    Tensor tensor;
    bool decay = false;
};

std::vector<ParamSlot> trainable_slots(AdapterStateT<float>& adapters, CosineHead& head) {
    std::vector<ParamSlot> slots;
    for (auto& [name, t] : adapters.named_parameters()) {
        const bool is_proj = name.size() > 5 && (name.rfind("w_down") == name.size() - 6 ||
                                                 name.rfind("w_up") == name.size() - 4);
        slots.push_back({*t, is_proj});
    }
    slots.push_back({head.weight, false});
    return slots;
}

} // namespace

double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) {
        throw ContractError("cosine_lr: total_steps must be positive");
    }
    const double s = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * (1.0 + std::cos(3.14159265358979323846 * s)) / 2.0;
}

std::vector<double> avg_from_last(const std::vector<double>& last) {
    std::vector<double> avg;
    avg.reserve(last.size());
    double sum = 0.0;
    for (std::size_t t = 0; t < last.size(); ++t) {
        sum += last[t];
        avg.push_back(sum / static_cast<double>(t + 1));
    }
    return avg;
}

CompositeEncoder::CompositeEncoder(const EncoderStateT<float>& encoder,
                                   const AdapterStateT<float>& adapters)
    : encoder_(&encoder), adapters_(&adapters) {}

std::size_t CompositeEncoder::feature_dim() const {
    return 2 * encoder_->config.embed_dim;
}

Tensor CompositeEncoder::features(const std::vector<std::vector<float>>& images) const {
    std::vector<std::vector<float>> std_images;
    std_images.reserve(images.size());
    for (const auto& img : images) std_images.push_back(standardize(img));
    auto finetuned = encode(*encoder_, adapters_, std_images);
    auto frozen = encode<float>(*encoder_, std_images);
    return concat_cols<float>({finetuned, frozen});
}

namespace {

Tensor batched_features(const CompositeEncoder& composite, const std::vector<Sample>& samples) {
    const std::size_t n = samples.size();
    const std::size_t dim = composite.feature_dim();
    auto out = Tensor::zeros({n, dim});
    for (std::size_t start = 0; start < n; start += kEvalChunk) {
        const std::size_t len = std::min(kEvalChunk, n - start);
        std::vector<std::vector<float>> imgs;
        imgs.reserve(len);
        for (std::size_t i = 0; i < len; ++i) imgs.push_back(samples[start + i].pixels);
        auto feats = composite.features(imgs);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < dim; ++j) out.at(start + i, j) = feats.at(i, j);
    }
    return out;
}

} // namespace

FinetuneStats finetune_task1(const EncoderStateT<float>& encoder, AdapterStateT<float>& adapters,
                             CosineHead& head, TaskStream& stream, const TrainRecipe& recipe,
                             std::uint64_t seed) {
    recipe.validate();
    require_frozen(const_cast<EncoderStateT<float>&>(encoder), "finetune_task1");

    const auto& class_ids = stream.class_ids(0);
    const auto& train = stream.train_samples(0);
    if (train.empty()) {
        throw ContractError("finetune_task1: task 1 has no training samples");
    }
    if (head.weight.rows() != class_ids.size()) {
        throw ContractError("finetune_task1: head covers " + std::to_string(head.weight.rows()) +
                            " classes but task 1 has " + std::to_string(class_ids.size()));
    }

    const std::size_t n = train.size();
    const std::size_t steps_per_epoch = (n + recipe.batch_size - 1) / recipe.batch_size;
    const std::size_t total_steps = recipe.epochs * steps_per_epoch;
    auto slots = trainable_slots(adapters, head);

    // Loss of a sample subset with whatever tape is currently active.
    auto loss_on = [&](const std::vector<std::size_t>& idx) {
        auto imgs = standardized_images(train, idx);
        auto labels = local_labels(train, idx, class_ids);
        auto feats = encode(encoder, &adapters, imgs);
        auto logits = head.logits(feats);
        return cross_entropy_logits(logits, labels);
    };

    std::vector<std::size_t> probe(std::min(n, recipe.batch_size));
    std::iota(probe.begin(), probe.end(), 0);

    FinetuneStats stats;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
        Rng shuffler(derive_seed(seed, {0x736875ULL, epoch})); // "shu"
        shuffler.shuffle(order);
        for (std::size_t start = 0; start < n; start += recipe.batch_size) {
            const std::size_t len = std::min(recipe.batch_size, n - start);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() +
                                               static_cast<std::ptrdiff_t>(start + len));
            Tape tape;
            {
                auto scope = tape.activate();
                auto loss = loss_on(batch);
                backward(loss);
            }
            if (global_step == 0) {
                for (const auto& s : slots) {
                    if (s.tensor.has_grad()) stats.grad_coordinates += s.tensor.size();
                }
            }
            const double lr = cosine_lr(recipe.lr0, global_step, total_steps);
            for (auto& s : slots) {
                if (!s.tensor.has_grad()) continue;
                const auto& g = s.tensor.grad();
                const float wd = s.decay ? static_cast<float>(recipe.weight_decay) : 0.0f;
                for (std::size_t i = 0; i < s.tensor.size(); ++i) {
                    s.tensor.at(i) -= static_cast<float>(lr) * (g[i] + wd * s.tensor.at(i));
                }
                s.tensor.clear_grad();
            }
            ++global_step;
            ++stats.steps;
        }
        stats.probe_losses.push_back(loss_on(probe).item());
    }
    return stats;
}

double evaluate(const CompositeEncoder& composite, const PrototypeClassifier& classifier,
                TaskStream& stream, std::size_t upto_task) {
    std::size_t correct = 0, total = 0;
    for (std::size_t t = 0; t <= upto_task; ++t) {
        const auto& test = stream.test_samples(t);
        for (const auto& s : test) {
            if (!classifier.has_class(s.label)) {
                throw ContractError("evaluate: test label " + std::to_string(s.label) +
                                    " unseen by the classifier");
            }
        }
        if (test.empty()) continue;
        auto feats = batched_features(composite, test);
        auto cls = classifier.classify(feats);
        for (std::size_t i = 0; i < test.size(); ++i) {
            correct += (cls.predictions[i] == test[i].label) ? 1 : 0;
        }
        total += test.size();
    }
    if (total == 0) {
        throw ContractError("evaluate: no test samples in tasks 0.." + std::to_string(upto_task));
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::string param_sha256(EncoderStateT<float>& encoder, AdapterStateT<float>& adapters) {
    Sha256 h;
    for (auto& [name, t] : encoder.named_parameters()) {
        h.update(name);
        h.update_values(t->data());
    }
    for (auto& [name, t] : adapters.named_parameters()) {
        h.update(name);
        h.update_values(t->data());
    }
    return h.hex_digest();
}

ProtocolResult run_protocol(TaskStream& stream, EncoderStateT<float>& encoder,
                            const AdapterConfig& adapter_config, const TrainRecipe& recipe,
                            std::uint64_t seed, const std::string& fingerprint) {
    const auto t_start = std::chrono::steady_clock::now();
    recipe.validate();
    adapter_config.validate(encoder.config.num_blocks);
    require_frozen(encoder, "run_protocol");

    ProtocolResult result;
    result.encoder = encoder;
    result.report.seed = seed;
    result.report.fingerprint = fingerprint;
    result.report.trainable_params = count_trainable(adapter_config, encoder.config.embed_dim);

    result.adapters = init_adapters<float>(adapter_config, encoder.config.embed_dim,
                                           derive_seed(seed, {0x6164ULL}));
    result.adapters.set_trainable(true);

    stream.begin_task(0);
    auto head = init_cosine_head<float>(stream.class_ids(0).size(), encoder.config.embed_dim,
                                        static_cast<float>(recipe.temperature),
                                        derive_seed(seed, {0x6864ULL}));
    result.finetune = finetune_task1(encoder, result.adapters, head, stream, recipe, seed);
    result.adapters.freeze();
    result.post_task1_checksum = param_sha256(encoder, result.adapters);

    CompositeEncoder composite(encoder, result.adapters);
    result.classifier = PrototypeClassifier(composite.feature_dim());

    double last_sum = 0.0;
    for (std::size_t t = 0; t < stream.num_tasks(); ++t) {
        stream.begin_task(t);
        const auto& train = stream.train_samples(t);
        if (train.empty()) {
            throw ContractError("run_protocol: task " + std::to_string(t + 1) +
                                " has no training samples");
        }
        auto feats = batched_features(composite, train);
        std::vector<int> labels;
        labels.reserve(train.size());
        for (const auto& s : train) labels.push_back(s.label);
        auto prototypes = compute_prototypes(feats, labels, &stream.class_ids(t));
        result.classifier.grow(prototypes);

        const double last_t = evaluate(composite, result.classifier, stream, t);
        result.report.last.push_back(last_t);
        last_sum += last_t;
        result.report.avg.push_back(last_sum / static_cast<double>(t + 1));
        result.per_task_checksums.push_back(param_sha256(encoder, result.adapters));
    }

    const auto t_end = std::chrono::steady_clock::now();
    result.report.wall_seconds = std::chrono::duration<double>(t_end - t_start).count();
    return result;
}

void ProtocolSpec::validate() const {
    encoder.validate();
    adapter_config().validate(encoder.num_blocks);
    recipe.validate();
    data.validate();
    if (data.source == DatasetSpec::Source::synthetic) {
        plan.validate(data.num_classes);
    }
    if (imbalance <= 0.0 || imbalance > 1.0) {
        throw ConfigError("protocol: imbalance must lie in (0, 1], got " +
                          std::to_string(imbalance));
    }
    if (encoder.image_size != data.geometry.height || encoder.image_size != data.geometry.width ||
        encoder.channels != data.geometry.channels) {
        throw ConfigError("protocol: encoder geometry does not match the dataset geometry");
    }
}

ProtocolResult run_spec(const ProtocolSpec& spec, std::uint64_t seed,
                        const std::string& fingerprint) {
    spec.validate();

    DatasetSpec data = spec.data;
    data.seed = derive_seed(seed, {0x646174ULL}); // "dat"
    LabeledDataset dataset = data.source == DatasetSpec::Source::synthetic
                                 ? generate_synthetic(data)
                                 : ingest_raw(data.raw_dir, data.manifest, data.geometry);
    if (spec.imbalance < 1.0) {
        dataset = apply_imbalance(dataset, spec.imbalance, derive_seed(seed, {0x726bULL}));
    }
    SplitPlan plan = spec.plan;
    plan.validate(dataset.classes.size());
    TaskStream stream = split_stream(dataset, plan, derive_seed(seed, {0x6f72ULL}));

    auto encoder = init_encoder<float>(spec.encoder, seed);
    encoder.freeze();
    return run_protocol(stream, encoder, spec.adapter_config(), spec.recipe, seed, fingerprint);
}

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "adapter_count" || name == "count") return SweepAxis::adapter_count;
    if (name == "adapter_position" || name == "position") return SweepAxis::adapter_position;
    if (name == "kinds" || name == "kinds_Z") return SweepAxis::kinds;
    if (name == "bottleneck") return SweepAxis::bottleneck;
    if (name == "imbalance") return SweepAxis::imbalance;
    throw ConfigError("unknown sweep axis '" + name + "'");
}

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto comma = s.find(',', pos);
        const auto end = comma == std::string::npos ? s.size() : comma;
        std::string item = s.substr(pos, end - pos);
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::size_t parse_size(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size() || v < 0) throw std::invalid_argument(s);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("bad " + what + " value '" + s + "'");
    }
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad " + what + " value '" + s + "'");
    }
}

std::vector<AdapterKind> parse_kinds_token(const std::string& token) {
    if (token == "none") return {};
    std::vector<AdapterKind> kinds;
    std::size_t pos = 0;
    while (pos <= token.size()) {
        const auto plus = token.find('+', pos);
        const auto end = plus == std::string::npos ? token.size() : plus;
        const std::string item = token.substr(pos, end - pos);
        if (item == "mlp") {
            kinds.push_back(AdapterKind::AdaptMLP);
        } else if (item == "atten") {
            kinds.push_back(AdapterKind::AdaptAtten);
        } else if (item == "all") {
            kinds.push_back(AdapterKind::AdaptAll);
        } else {
            throw ConfigError("unknown adapter kind '" + item + "' in '" + token + "'");
        }
        if (plus == std::string::npos) break;
        pos = plus + 1;
    }
    return kinds;
}

} // namespace

std::vector<std::string> expand_grid(SweepAxis axis, const std::string& grid) {
    if (axis == SweepAxis::kinds && grid == "all8") {
        return {"none", "mlp", "atten", "all", "mlp+atten", "atten+all", "mlp+all",
                "mlp+atten+all"};
    }
    return split_csv(grid);
}

ProtocolSpec apply_grid_point(const ProtocolSpec& base, SweepAxis axis, const std::string& value) {
    ProtocolSpec spec = base;
    switch (axis) {
    case SweepAxis::adapter_count: {
        const std::size_t count = parse_size(value, "adapter count");
        if (count > spec.encoder.num_blocks) {
            throw ConfigError("adapter count " + value + " exceeds " +
                              std::to_string(spec.encoder.num_blocks) + " blocks");
        }
        spec.adapter_blocks.clear();
        for (std::size_t b = 0; b < count; ++b) spec.adapter_blocks.push_back(b);
        break;
    }
    case SweepAxis::adapter_position: {
        const auto dash = value.find('-');
        if (dash == std::string::npos) {
            throw ConfigError("position grid entries look like '1-3', got '" + value + "'");
        }
        const std::size_t lo = parse_size(value.substr(0, dash), "position");
        const std::size_t hi = parse_size(value.substr(dash + 1), "position");
        if (lo < 1 || hi < lo || hi > spec.encoder.num_blocks) {
            throw ConfigError("position range '" + value + "' invalid for " +
                              std::to_string(spec.encoder.num_blocks) + " blocks");
        }
        spec.adapter_blocks.clear();
        for (std::size_t b = lo; b <= hi; ++b) spec.adapter_blocks.push_back(b - 1);
        break;
    }
    case SweepAxis::kinds:
        spec.adapter_kinds = parse_kinds_token(value);
        break;
    case SweepAxis::bottleneck:
        spec.bottleneck = parse_size(value, "bottleneck");
        if (spec.bottleneck == 0) throw ConfigError("bottleneck must be positive");
        spec.recipe.bottleneck = spec.bottleneck;
        break;
    case SweepAxis::imbalance:
        spec.imbalance = parse_double(value, "imbalance factor");
        break;
    }
    return spec;
}

std::vector<SweepPoint> sweep(SweepAxis axis, const std::vector<std::string>& grid,
                              const ProtocolSpec& base, std::uint64_t seed,
                              const std::string& fingerprint, std::size_t threads) {
    std::vector<SweepPoint> points;
    if (grid.empty()) return points;
    if (threads == 0) threads = 1;

    std::vector<ProtocolSpec> specs;
    specs.reserve(grid.size());
    for (const auto& value : grid) {
        specs.push_back(apply_grid_point(base, axis, value));
    }

    points.resize(grid.size());
    for (std::size_t wave = 0; wave < grid.size(); wave += threads) {
        const std::size_t len = std::min(threads, grid.size() - wave);
        std::vector<std::future<RunReport>> futures;
        futures.reserve(len);
        for (std::size_t i = 0; i < len; ++i) {
            const ProtocolSpec& spec = specs[wave + i];
            futures.push_back(std::async(std::launch::async, [&spec, seed, &fingerprint]() {
                return run_spec(spec, seed, fingerprint).report;
            }));
        }
        for (std::size_t i = 0; i < len; ++i) {
            points[wave + i].value = grid[wave + i];
            points[wave + i].report = futures[i].get();
        }
    }
    return points;
}

} // namespace adaptcl
