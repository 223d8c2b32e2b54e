#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adaptcl/init.hpp"
#include "adaptcl/ops.hpp"
#include "adaptcl/rng.hpp"
#include "adaptcl/serialize.hpp"
#include "adaptcl/tensor.hpp"

namespace adaptcl {

// Per-class arithmetic mean of feature rows. Every class in
// `required_classes` (when given) must have at least one sample.
std::map<int, std::vector<float>> compute_prototypes(
    const Tensor& features, const std::vector<int>& labels,
    const std::vector<int>* required_classes = nullptr);

// Growable cosine-similarity classifier. Columns of the weight matrix are
// class prototypes; each incremental task appends the columns of its new
// classes and never touches existing ones.
class PrototypeClassifier {
public:
    PrototypeClassifier() = default;
    explicit PrototypeClassifier(std::size_t feature_dim) : feature_dim_(feature_dim) {}

    std::size_t feature_dim() const { return feature_dim_; }
    std::size_t num_classes() const { return class_ids_.size(); }
    const std::vector<int>& class_ids() const { return class_ids_; }
    bool has_class(int id) const;

    // Weight matrix [feature_dim, num_classes]; column order matches class_ids().
    const Tensor& weight() const { return weight_; }

    // Appends one column per new class, ascending class id. New ids must be
    // disjoint from the existing ones; zero prototypes are rejected.
    void grow(const std::map<int, std::vector<float>>& prototypes);

    struct Classification {
        Tensor scores; // [batch, num_classes], cosine in [-1, 1]
        std::vector<int> predictions; // class ids, ties broken by lowest id
    };

    Classification classify(const Tensor& features) const;

    // Serialization as "classifier.class_{id}" records. Loading orders
    // columns by ascending class id.
    std::vector<TensorRecord> to_records() const;
    static PrototypeClassifier from_records(const std::vector<TensorRecord>& records);

private:
    std::size_t feature_dim_ = 0;
    std::vector<int> class_ids_;
    Tensor weight_; // [feature_dim, num_classes]
};

// Trainable cosine head used only while finetuning on the first task:
// logits are cosine similarities between (row-)normalized features and
// normalized class rows, divided by the temperature.
template <typename Real>
struct CosineHeadT {
    TensorT<Real> weight; // [num_classes, dim]
    Real temperature = Real(0.07);

    TensorT<Real> logits(const TensorT<Real>& features) const {
        auto fn = normalize_rows(features);
        auto wn = normalize_rows(weight);
        return scale(matmul(fn, transpose(wn)), Real(1) / temperature);
    }
};

template <typename Real>
CosineHeadT<Real> init_cosine_head(std::size_t num_classes, std::size_t dim, Real temperature,
                                   std::uint64_t seed) {
    if (num_classes == 0 || dim == 0) {
        throw ContractError("cosine head requires positive class count and dimension");
    }
    CosineHeadT<Real> head;
    head.temperature = temperature;
    Rng rng(derive_seed(seed, {0x686561ULL})); // "hea"
    head.weight = detail::init_proj<Real>(rng, {num_classes, dim});
    return head;
}

using CosineHead = CosineHeadT<float>;

} // namespace adaptcl
