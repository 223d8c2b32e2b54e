#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaptcl/adapters.hpp"
#include "adaptcl/data.hpp"
#include "adaptcl/encoder.hpp"
#include "adaptcl/protoclf.hpp"
#include "adaptcl/taskstream.hpp"
#include "adaptcl/tensor.hpp"

namespace adaptcl {

struct TrainRecipe {
    std::size_t epochs = 20;
    double lr0 = 0.01;
    double weight_decay = 0.0005;
    std::size_t batch_size = 64;
    std::size_t bottleneck = 64;
    double temperature = 0.07;

    void validate() const {
        if (epochs == 0 || batch_size == 0 || bottleneck == 0) {
            throw ConfigError("recipe: epochs, batch_size and bottleneck must be positive");
        }
        if (lr0 <= 0.0 || weight_decay < 0.0 || temperature <= 0.0) {
            throw ConfigError("recipe: lr0 and temperature must be positive, weight_decay "
                              "non-negative");
        }
    }
};

// lr(s) = lr0 * (1 + cos(pi * s / total)) / 2, so lr(0) == lr0 and the final
// step sits at the bottom of the cosine.
double cosine_lr(double lr0, std::size_t step, std::size_t total_steps);

struct RunReport {
    std::vector<double> last; // Last_t, cumulative top-1 over tasks 1..t
    std::vector<double> avg;  // Avg_t = mean(Last_1..Last_t)
    std::size_t trainable_params = 0;
    std::string fingerprint;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

// The metric aggregator: Avg_t = mean(Last_1..Last_t).
std::vector<double> avg_from_last(const std::vector<double>& last);

// Feature concatenation of the adapter-finetuned and the plain frozen
// encoder: output is [batch, 2D] with the finetuned half first. Built after
// task-1 finetuning and frozen from then on.
class CompositeEncoder {
public:
    CompositeEncoder(const EncoderStateT<float>& encoder, const AdapterStateT<float>& adapters);

    // Raw pixels in, standardized internally.
    Tensor features(const std::vector<std::vector<float>>& images) const;
    std::size_t feature_dim() const;

    const EncoderStateT<float>& encoder() const { return *encoder_; }
    const AdapterStateT<float>& adapters() const { return *adapters_; }

private:
    const EncoderStateT<float>* encoder_;
    const AdapterStateT<float>* adapters_;
};

struct FinetuneStats {
    std::vector<double> probe_losses; // loss on a fixed probe batch, one per epoch
    std::size_t steps = 0;
    std::size_t grad_coordinates = 0; // trainable coordinates that received gradients
};

// Finetunes adapter and head parameters on the first task with SGD under a
// cosine schedule; the encoder must already be frozen and stays bit-stable.
// Weight decay applies to the adapter projection matrices only.
FinetuneStats finetune_task1(const EncoderStateT<float>& encoder, AdapterStateT<float>& adapters,
                             CosineHead& head, TaskStream& stream, const TrainRecipe& recipe,
                             std::uint64_t seed);

// Cumulative top-1 accuracy over the union of the test sets of tasks
// 0..upto_task (inclusive).
double evaluate(const CompositeEncoder& composite, const PrototypeClassifier& classifier,
                TaskStream& stream, std::size_t upto_task);

// SHA-256 over every encoder and adapter parameter, in named order. Constant
// from the end of task 1 through the final task.
std::string param_sha256(EncoderStateT<float>& encoder, AdapterStateT<float>& adapters);

struct ProtocolResult {
    RunReport report;
    PrototypeClassifier classifier;
    EncoderStateT<float> encoder; // handle copies aliasing the run's encoder
    AdapterStateT<float> adapters;
    FinetuneStats finetune;
    std::string post_task1_checksum;
    std::vector<std::string> per_task_checksums; // checksum after each task >= 1
};

// The full incremental protocol: finetune adapters + temporary cosine head
// on task 1, freeze, concatenate frozen and finetuned features, then for
// every task compute prototypes, grow the classifier and evaluate
// cumulatively.
ProtocolResult run_protocol(TaskStream& stream, EncoderStateT<float>& encoder,
                            const AdapterConfig& adapter_config, const TrainRecipe& recipe,
                            std::uint64_t seed, const std::string& fingerprint = "");

// Everything needed to run one experiment end to end.
struct ProtocolSpec {
    EncoderConfig encoder;
    std::vector<std::size_t> adapter_blocks; // 0-indexed
    std::vector<AdapterKind> adapter_kinds;
    std::size_t bottleneck = 64;
    double alpha = 0.1;
    TrainRecipe recipe;
    DatasetSpec data;
    SplitPlan plan;
    double imbalance = 1.0;

    AdapterConfig adapter_config() const {
        AdapterConfig cfg;
        for (std::size_t b : adapter_blocks) {
            for (AdapterKind k : adapter_kinds) {
                cfg.placements.push_back({b, k});
            }
        }
        cfg.bottleneck = bottleneck;
        cfg.alpha = alpha;
        cfg.canonicalize();
        return cfg;
    }

    void validate() const;
};

// Builds the dataset and stream from the given experiment spec and runs the
// protocol. All
// randomness derives from `seed`.
ProtocolResult run_spec(const ProtocolSpec& spec, std::uint64_t seed,
                        const std::string& fingerprint = "");

enum class SweepAxis { adapter_count, adapter_position, kinds, bottleneck, imbalance };

SweepAxis parse_sweep_axis(const std::string& name);

// Expands shorthand grids ("all8" for the kinds axis) into explicit entries.
std::vector<std::string> expand_grid(SweepAxis axis, const std::string& grid);

// Applies one grid entry to the base spec.
ProtocolSpec apply_grid_point(const ProtocolSpec& base, SweepAxis axis, const std::string& value);

struct SweepPoint {
    std::string value;
    RunReport report;
};

// One full protocol run per grid point, all from the same seed so points are
// comparable. Points may run on up to `threads` workers; results always come
// back in grid order.
std::vector<SweepPoint> sweep(SweepAxis axis, const std::vector<std::string>& grid,
                              const ProtocolSpec& base, std::uint64_t seed,
                              const std::string& fingerprint, std::size_t threads);

} // namespace adaptcl
