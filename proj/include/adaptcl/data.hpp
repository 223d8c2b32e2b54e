#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adaptcl/taskstream.hpp"

namespace adaptcl {

// Per-class sample store before task splitting. Pixels are kept exactly as
// generated or ingested; standardize() maps them to model inputs.
struct ClassSamples {
    int class_id = 0;
    std::vector<std::vector<float>> train;
    std::vector<std::vector<float>> test;
};

struct LabeledDataset {
    ImageGeometry geometry;
    std::vector<ClassSamples> classes; // ascending class_id
};

struct DatasetSpec {
    enum class Source { synthetic, raw_dir };
    Source source = Source::synthetic;
    std::size_t num_classes = 10;
    std::size_t samples_per_class = 50; // training samples per class (max_num)
    ImageGeometry geometry;
    double mean_spread = 0.3; // std of each class's mean image
    double noise_std = 0.02;  // per-sample noise around the class mean
    std::string raw_dir;
    std::string manifest = "manifest.tsv";
    std::uint64_t seed = 1;

    void validate() const;
};

// Model-input standardization with fixed per-channel constants (0.5, 0.5):
// y = (x - 0.5) / 0.5. Raw pixels are expected in [0, 1] by convention but
// only finiteness is enforced, keeping the map invertible for exports.
std::vector<float> standardize(const std::vector<float>& pixels);

// Gaussian-cluster data: each class draws a mean image (std mean_spread)
// and samples around it (std noise_std), deterministically per seed, with a
// stratified 80/20 train/test split.
LabeledDataset generate_synthetic(const DatasetSpec& spec);

struct SplitPlan {
    std::size_t base_classes = 0; // classes trained with task 1; 0 disables
    std::vector<std::size_t> step_classes;

    std::size_t num_tasks() const { return (base_classes > 0 ? 1 : 0) + step_classes.size(); }
    void validate(std::size_t num_classes) const;
};

// Deterministic class-order shuffle, then disjoint class sets per task;
// every sample lands in exactly one task.
TaskStream split_stream(const LabeledDataset& dataset, const SplitPlan& plan,
                        std::uint64_t class_order_seed);

// Exponential class imbalance: the class at rank i (ranks assigned by a
// seeded shuffle) keeps round(max_num * imb_factor^(i / num_classes)) train
// samples, clamped to 1 with a warning when rounding reaches zero. Test sets
// stay balanced so accuracies remain comparable.
LabeledDataset apply_imbalance(const LabeledDataset& dataset, double imb_factor,
                               std::uint64_t rank_seed);

// The closed-form count for rank i before clamping.
std::size_t imbalance_count(std::size_t max_num, double imb_factor, std::size_t rank,
                            std::size_t num_classes);

// Loads a dataset from `dir` following a manifest of
// "relative/path<TAB>class_id" lines; each path names a SIML container with
// a single image record of dims [channels, height, width]. Duplicate paths
// load twice. Per class, the last fifth of samples (manifest order) becomes
// the test split.
LabeledDataset ingest_raw(const std::string& dir, const std::string& manifest,
                          const ImageGeometry& geometry);

// Writes the dataset back out as per-image SIML files plus a manifest, in a
// layout ingest_raw reads back to an identical dataset.
void export_raw(const LabeledDataset& dataset, const std::string& dir,
                const std::string& manifest);

} // namespace adaptcl
