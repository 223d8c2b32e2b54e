#include "adaptcl/protoclf.hpp"

#include <algorithm>
#include <cmath>

#include "adaptcl/error.hpp"

namespace adaptcl {

std::map<int, std::vector<float>> compute_prototypes(const Tensor& features,
                                                     const std::vector<int>& labels,
                                                     const std::vector<int>* required_classes) {
    if (features.rank() != 2) {
        throw DimensionError("compute_prototypes: features must be [n, dim]");
    }
    const std::size_t n = features.rows(), d = features.cols();
    if (labels.size() != n) {
        throw DimensionError("compute_prototypes: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(n) + " feature rows");
    }
    if (n == 0) {
        throw ContractError("compute_prototypes: empty feature set");
    }
    std::map<int, std::vector<float>> sums;
    std::map<int, std::size_t> counts;
    for (std::size_t i = 0; i < n; ++i) {
        auto& s = sums[labels[i]];
        if (s.empty()) s.assign(d, 0.0f);
        for (std::size_t j = 0; j < d; ++j) s[j] += features.at(i, j);
        ++counts[labels[i]];
    }
    if (required_classes != nullptr) {
        for (int c : *required_classes) {
            if (counts.find(c) == counts.end()) {
                throw ContractError("compute_prototypes: class " + std::to_string(c) +
                                    " has no samples");
            }
        }
    }
    for (auto& [c, s] : sums) {
        const float k = static_cast<float>(counts[c]);
        for (float& v : s) v /= k;
    }
    return sums;
}

bool PrototypeClassifier::has_class(int id) const {
    return std::find(class_ids_.begin(), class_ids_.end(), id) != class_ids_.end();
}

void PrototypeClassifier::grow(const std::map<int, std::vector<float>>& prototypes) {
    if (prototypes.empty()) {
        throw ContractError("grow: no prototypes given");
    }
    for (const auto& [id, p] : prototypes) {
        if (has_class(id)) {
            throw ContractError("grow: class " + std::to_string(id) + " already present");
        }
        if (feature_dim_ == 0) feature_dim_ = p.size();
        if (p.size() != feature_dim_) {
            throw DimensionError("grow: prototype for class " + std::to_string(id) + " has dim " +
                                 std::to_string(p.size()) + ", classifier expects " +
                                 std::to_string(feature_dim_));
        }
        float sq = 0.0f;
        for (float v : p) sq += v * v;
        if (sq == 0.0f) {
            throw ContractError("grow: prototype for class " + std::to_string(id) +
                                " is the zero vector");
        }
    }
    const std::size_t old_c = class_ids_.size();
    const std::size_t new_c = old_c + prototypes.size();
    auto grown = Tensor::zeros({feature_dim_, new_c});
    for (std::size_t d = 0; d < feature_dim_; ++d) {
        for (std::size_t k = 0; k < old_c; ++k) {
            grown.at(d, k) = weight_.at(d, k);
        }
    }
    std::size_t k = old_c;
    for (const auto& [id, p] : prototypes) { // std::map iterates ascending id
        for (std::size_t d = 0; d < feature_dim_; ++d) {
            grown.at(d, k) = p[d];
        }
        class_ids_.push_back(id);
        ++k;
    }
    weight_ = grown;
}

PrototypeClassifier::Classification PrototypeClassifier::classify(const Tensor& features) const {
    if (class_ids_.empty()) {
        throw ContractError("classify: classifier has no classes");
    }
    if (features.rank() != 2 || features.cols() != feature_dim_) {
        throw DimensionError("classify: features must be [n, " + std::to_string(feature_dim_) +
                             "], got " + detail::shape_str(features.shape()));
    }
    const std::size_t n = features.rows(), c = class_ids_.size();
    // Column norms are nonzero by the grow contract.
    std::vector<float> col_norm(c, 0.0f);
    for (std::size_t k = 0; k < c; ++k) {
        float sq = 0.0f;
        for (std::size_t d = 0; d < feature_dim_; ++d) sq += weight_.at(d, k) * weight_.at(d, k);
        col_norm[k] = std::sqrt(sq);
    }
    Classification out;
    out.scores = Tensor::zeros({n, c});
    out.predictions.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        float sq = 0.0f;
        for (std::size_t d = 0; d < feature_dim_; ++d) sq += features.at(i, d) * features.at(i, d);
        if (sq == 0.0f) {
            throw ContractError("classify: feature row " + std::to_string(i) +
                                " has zero norm (degenerate encoder output)");
        }
        const float fnorm = std::sqrt(sq);
        std::size_t best = 0;
        float best_score = -2.0f;
        for (std::size_t k = 0; k < c; ++k) {
            float dot = 0.0f;
            for (std::size_t d = 0; d < feature_dim_; ++d) {
                dot += features.at(i, d) * weight_.at(d, k);
            }
            const float s = dot / (fnorm * col_norm[k]);
            out.scores.at(i, k) = s;
            const bool wins = s > best_score ||
                              (s == best_score && class_ids_[k] < class_ids_[best]);
            if (k == 0 || wins) {
                best = k;
                best_score = s;
            }
        }
        out.predictions[i] = class_ids_[best];
    }
    return out;
}

std::vector<TensorRecord> PrototypeClassifier::to_records() const {
    std::vector<TensorRecord> records;
    for (std::size_t k = 0; k < class_ids_.size(); ++k) {
        TensorRecord rec;
        rec.name = "classifier.class_" + std::to_string(class_ids_[k]);
        rec.dims = {static_cast<std::uint32_t>(feature_dim_)};
        rec.data.resize(feature_dim_);
        for (std::size_t d = 0; d < feature_dim_; ++d) rec.data[d] = weight_.at(d, k);
        records.push_back(std::move(rec));
    }
    return records;
}

PrototypeClassifier PrototypeClassifier::from_records(const std::vector<TensorRecord>& records) {
    const std::string prefix = "classifier.class_";
    std::map<int, std::vector<float>> prototypes;
    for (const auto& rec : records) {
        if (rec.name.rfind(prefix, 0) != 0) continue;
        int id = 0;
        try {
            id = std::stoi(rec.name.substr(prefix.size()));
        } catch (const std::exception&) {
            throw FormatError("bad classifier record name '" + rec.name + "'");
        }
        if (rec.dims.size() != 1) {
            throw FormatError("classifier record '" + rec.name + "' must be rank-1");
        }
        prototypes[id] = rec.data;
    }
    PrototypeClassifier clf;
    if (!prototypes.empty()) {
        clf.grow(prototypes);
    }
    return clf;
}

} // namespace adaptcl
