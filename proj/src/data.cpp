#include "adaptcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "adaptcl/error.hpp"
#include "adaptcl/rng.hpp"
#include "adaptcl/serialize.hpp"

namespace adaptcl {

namespace {

std::size_t test_count_for(std::size_t total) {
    return std::max<std::size_t>(1, total / 5);
}

} // namespace

void DatasetSpec::validate() const {
    if (num_classes < 2) {
        throw ConfigError("data: num_classes must be at least 2");
    }
    if (samples_per_class < 1) {
        throw ConfigError("data: samples_per_class must be at least 1");
    }
    if (geometry.numel() == 0) {
        throw ConfigError("data: image geometry is degenerate");
    }
    if (source == Source::synthetic) {
        if (mean_spread < 0.0 || noise_std < 0.0) {
            throw ConfigError("data: mean_spread and noise_std must be non-negative");
        }
    } else if (raw_dir.empty()) {
        throw ConfigError("data: raw_dir source requires a directory");
    }
}

std::vector<float> standardize(const std::vector<float>& pixels) {
    std::vector<float> out(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        out[i] = (pixels[i] - 0.5f) / 0.5f;
    }
    return out;
}

LabeledDataset generate_synthetic(const DatasetSpec& spec) {
    spec.validate();
    LabeledDataset ds;
    ds.geometry = spec.geometry;
    const std::size_t numel = spec.geometry.numel();
    const std::size_t n_train = spec.samples_per_class;
    const std::size_t n_test = std::max<std::size_t>(1, n_train / 4); // 80/20 of the total
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        Rng rng(derive_seed(spec.seed, {0x73796eULL, c})); // "syn"
        std::vector<float> mean(numel);
        for (auto& v : mean) v = static_cast<float>(rng.normal() * spec.mean_spread);
        ClassSamples cs;
        cs.class_id = static_cast<int>(c);
        for (std::size_t s = 0; s < n_train + n_test; ++s) {
            std::vector<float> img(numel);
            for (std::size_t i = 0; i < numel; ++i) {
                img[i] = mean[i] + static_cast<float>(rng.normal() * spec.noise_std);
            }
            if (s < n_train) {
                cs.train.push_back(std::move(img));
            } else {
                cs.test.push_back(std::move(img));
            }
        }
        ds.classes.push_back(std::move(cs));
    }
    return ds;
}

void SplitPlan::validate(std::size_t num_classes) const {
    if (step_classes.empty() && base_classes == 0) {
        throw ConfigError("split plan: no tasks defined");
    }
    std::size_t total = base_classes;
    for (std::size_t s : step_classes) {
        if (s == 0) {
            throw ConfigError("split plan: every step must contain at least one class");
        }
        total += s;
    }
    if (total != num_classes) {
        throw ConfigError("split plan: base " + std::to_string(base_classes) + " + steps sum to " +
                          std::to_string(total) + " but the dataset has " +
                          std::to_string(num_classes) + " classes");
    }
}

TaskStream split_stream(const LabeledDataset& dataset, const SplitPlan& plan,
                        std::uint64_t class_order_seed) {
    plan.validate(dataset.classes.size());
    std::vector<std::size_t> order(dataset.classes.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(class_order_seed, {0x6f7264ULL})); // "ord"
    rng.shuffle(order);

    std::vector<std::size_t> sizes;
    if (plan.base_classes > 0) sizes.push_back(plan.base_classes);
    sizes.insert(sizes.end(), plan.step_classes.begin(), plan.step_classes.end());

    std::vector<TaskStream::Task> tasks;
    std::size_t cursor = 0;
    for (std::size_t size : sizes) {
        TaskStream::Task task;
        std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                         order.begin() + static_cast<std::ptrdiff_t>(cursor + size));
        std::sort(members.begin(), members.end(),
                  [&](std::size_t a, std::size_t b) {
                      return dataset.classes[a].class_id < dataset.classes[b].class_id;
                  });
        for (std::size_t idx : members) {
            const auto& cs = dataset.classes[idx];
            task.class_ids.push_back(cs.class_id);
            for (const auto& img : cs.train) task.train.push_back({img, cs.class_id});
            for (const auto& img : cs.test) task.test.push_back({img, cs.class_id});
        }
        tasks.push_back(std::move(task));
        cursor += size;
    }
    return TaskStream(dataset.geometry, std::move(tasks));
}

std::size_t imbalance_count(std::size_t max_num, double imb_factor, std::size_t rank,
                            std::size_t num_classes) {
    const double exponent = static_cast<double>(rank) / static_cast<double>(num_classes);
    return static_cast<std::size_t>(
        std::llround(static_cast<double>(max_num) * std::pow(imb_factor, exponent)));
}

LabeledDataset apply_imbalance(const LabeledDataset& dataset, double imb_factor,
                               std::uint64_t rank_seed) {
    if (imb_factor <= 0.0 || imb_factor > 1.0) {
        throw ConfigError("imbalance factor must lie in (0, 1], got " +
                          std::to_string(imb_factor));
    }
    const std::size_t num_classes = dataset.classes.size();
    std::size_t max_num = 0;
    for (const auto& cs : dataset.classes) max_num = std::max(max_num, cs.train.size());

    std::vector<std::size_t> ranks(num_classes);
    std::iota(ranks.begin(), ranks.end(), 0);
    Rng rng(derive_seed(rank_seed, {0x696d62ULL})); // "imb"
    rng.shuffle(ranks);

    LabeledDataset out;
    out.geometry = dataset.geometry;
    out.classes = dataset.classes;
    for (std::size_t rank = 0; rank < num_classes; ++rank) {
        auto& cs = out.classes[ranks[rank]];
        std::size_t keep = imbalance_count(max_num, imb_factor, rank, num_classes);
        if (keep < 1) {
            std::cerr << "[adaptcl] warning: imbalance left class " << cs.class_id
                      << " with zero samples, clamping to 1\n";
            keep = 1;
        }
        if (keep < cs.train.size()) {
            cs.train.resize(keep);
        }
    }
    return out;
}

LabeledDataset ingest_raw(const std::string& dir, const std::string& manifest,
                          const ImageGeometry& geometry) {
    const std::string manifest_path = dir + "/" + manifest;
    std::ifstream in(manifest_path);
    if (!in) {
        throw IngestError("cannot open manifest '" + manifest_path + "'");
    }
    std::map<int, std::vector<std::vector<float>>> by_class;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw IngestError(manifest_path + ":" + std::to_string(line_no) +
                              ": expected 'path<TAB>class_id'");
        }
        const std::string rel = line.substr(0, tab);
        int label = 0;
        try {
            label = std::stoi(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw IngestError(manifest_path + ":" + std::to_string(line_no) +
                              ": bad class id '" + line.substr(tab + 1) + "'");
        }
        const std::string img_path = dir + "/" + rel;
        std::vector<TensorRecord> records;
        try {
            records = read_siml(img_path);
        } catch (const FormatError& e) {
            throw IngestError(std::string("while ingesting '") + img_path + "': " + e.what());
        }
        if (records.size() != 1) {
            throw IngestError("'" + img_path + "' must hold exactly one image record, found " +
                              std::to_string(records.size()));
        }
        const auto& rec = records[0];
        if (rec.dims.size() != 3 || rec.dims[0] != geometry.channels ||
            rec.dims[1] != geometry.height || rec.dims[2] != geometry.width) {
            throw IngestError("'" + img_path + "' has unexpected image dims");
        }
        for (float v : rec.data) {
            if (!std::isfinite(v)) {
                throw IngestError("'" + img_path + "' contains non-finite pixels");
            }
        }
        by_class[label].push_back(rec.data);
    }
    if (by_class.empty()) {
        throw IngestError(manifest_path + ": manifest lists no samples");
    }
    LabeledDataset ds;
    ds.geometry = geometry;
    for (auto& [label, imgs] : by_class) {
        ClassSamples cs;
        cs.class_id = label;
        const std::size_t n_test = imgs.size() > 1 ? test_count_for(imgs.size()) : 0;
        const std::size_t n_train = imgs.size() - n_test;
        for (std::size_t i = 0; i < imgs.size(); ++i) {
            (i < n_train ? cs.train : cs.test).push_back(std::move(imgs[i]));
        }
        ds.classes.push_back(std::move(cs));
    }
    return ds;
}

void export_raw(const LabeledDataset& dataset, const std::string& dir,
                const std::string& manifest) {
    std::filesystem::create_directories(dir);
    std::ostringstream lines;
    std::size_t counter = 0;
    for (const auto& cs : dataset.classes) {
        auto write_image = [&](const std::vector<float>& img) {
            std::ostringstream name;
            name << "img_" << counter++ << ".siml";
            TensorRecord rec;
            rec.name = "image";
            rec.dims = {static_cast<std::uint32_t>(dataset.geometry.channels),
                        static_cast<std::uint32_t>(dataset.geometry.height),
                        static_cast<std::uint32_t>(dataset.geometry.width)};
            rec.data = img;
            write_siml(dir + "/" + name.str(), {rec});
            lines << name.str() << '\t' << cs.class_id << '\n';
        };
        for (const auto& img : cs.train) write_image(img);
        for (const auto& img : cs.test) write_image(img);
    }
    std::ofstream out(dir + "/" + manifest, std::ios::trunc);
    if (!out) {
        throw IngestError("cannot write manifest '" + dir + "/" + manifest + "'");
    }
    out << lines.str();
}

} // namespace adaptcl
