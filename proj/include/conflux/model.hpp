// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conflux/checkpoint.hpp"
#include "conflux/dataset.hpp"

namespace conflux {

inline constexpr const char* kWeightName = "classifier.weight";
inline constexpr const char* kBiasName = "classifier.bias";

/// Hashed bag-of-words: lowercase, split on non-alphanumeric runs, FNV-1a
/// each token, count occurrences at hash mod feature_dim.
std::vector<float> featurize(std::string_view text, std::size_t feature_dim);

struct SparseFeatures {
    std::vector<std::uint32_t> index;
    std::vector<float> value;
};
SparseFeatures featurize_sparse(std::string_view text, std::size_t feature_dim);

/// Zero-initialized toy classifier: "classifier.weight" [classes x dim] and
/// "classifier.bias" [classes], label names kept in metadata.
Checkpoint make_toy_model(const std::vector<std::string>& labels, std::size_t feature_dim);

struct Prediction {
    std::size_t label = 0;
    std::string label_name;
    std::vector<double> probabilities;
};

/// Immutable, validated view of a toy-model checkpoint for repeated inference.
class ToyClassifier {
public:
    explicit ToyClassifier(const Checkpoint& model); // throws ValidationError

    std::size_t num_classes() const { return classes_; }
    std::size_t feature_dim() const { return dim_; }
    const std::vector<std::string>& labels() const { return labels_; }

    std::vector<double> logits(std::string_view text) const;
    Prediction predict(std::string_view text) const;

private:
    std::size_t classes_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> weight_;
    std::vector<float> bias_;
    std::vector<std::string> labels_;
};

/// softmax(W x + b); label = argmax with ties to the lowest class index.
Prediction predict(const Checkpoint& model, std::string_view text);

/// Label names stored in a toy model's metadata.
std::vector<std::string> model_labels(const Checkpoint& model);

enum class TrainMode { Full, Lora };

struct TrainConfig {
    double learning_rate = 0.5;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double l2 = 1e-3;
    std::size_t feature_dim = 1024;
    TrainMode mode = TrainMode::Full;
    std::size_t rank = 1;
    double init_sigma = 0.02;
    double clean_fraction = 0.10;

    void validate() const; // throws ValidationError
};

struct TrainLog {
    std::vector<double> epoch_loss; // mean cross-entropy seen during each epoch
};

/// Multinomial logistic regression by mini-batch gradient descent on softmax
/// cross-entropy with L2 decay on the weight matrix. Data order is reshuffled
/// every epoch from cfg.seed.
Checkpoint train_full(const LabeledSet& ds, const TrainConfig& cfg, TrainLog* log = nullptr);

/// Low-rank update of one target tensor: delta = B * A with A [r x d]
/// and B [c x r]. There is no extra scaling factor.
struct LoraAdapter {
    std::string target = kWeightName;
    std::size_t rank = 1;
    double init_sigma = 0.02;
    std::uint64_t seed = 0;
    Tensor a;
    Tensor b;

    /// Tensors "lora.<target>.A" / "lora.<target>.B"; rank and init in metadata.
    Checkpoint to_checkpoint() const;
    static LoraAdapter from_checkpoint(const Checkpoint& ckpt);
    bool operator==(const LoraAdapter&) const = default;
};

/// A ~ N(0, sigma^2) from `seed`, B = 0. Rejects rank >= min(classes, dim).
LoraAdapter init_lora(const Checkpoint& base, std::size_t rank, double init_sigma, std::uint64_t seed);

/// Trains only A and B against the frozen base; logits = (W0 + B A) x + b0.
/// cfg.mode must be Lora.
LoraAdapter train_lora(const Checkpoint& base, const LabeledSet& ds, const TrainConfig& cfg,
                       TrainLog* log = nullptr);

/// Folds B * A into the target tensor of base.
Checkpoint merge_lora(const Checkpoint& base, const LoraAdapter& adapter);

/// Logits through the unfused form W0 x + B (A x) + b0.
std::vector<double> lora_logits(const Checkpoint& base, const LoraAdapter& adapter, std::string_view text);

// Double-precision loss and gradients of the LoRA objective, exposed so the
// analytic gradients can be checked against finite differences.
struct LoraProblem {
    std::size_t classes = 0;
    std::size_t dim = 0;
    std::size_t rank = 0;
    std::vector<double> w0;      // classes x dim
    std::vector<double> b0;      // classes
    std::vector<double> x;       // n x dim, dense rows
    std::vector<std::size_t> y;  // n
    double l2 = 0.0;
};

struct LoraGradients {
    double loss = 0.0;
    std::vector<double> d_a; // rank x dim
    std::vector<double> d_b; // classes x rank
};

/// Mean cross-entropy over the problem's rows plus 0.5 * l2 * (|A|^2 + |B|^2).
double lora_loss(const LoraProblem& p, std::span<const double> a, std::span<const double> b);

/// With g = softmax(logits) - onehot(y): dB = g (A x)^T, dA = B^T g x^T,
/// averaged over rows, plus the L2 terms.
LoraGradients lora_gradients(const LoraProblem& p, std::span<const double> a, std::span<const double> b);

} // namespace conflux
