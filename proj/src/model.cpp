// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include "conflux/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include <fmt/core.h>
#include <json.hpp>

#include "conflux/errors.hpp"
#include "conflux/rng.hpp"

namespace conflux {

namespace {

template <typename Fn>
void for_each_token(std::string_view text, Fn&& fn) {
    std::string token;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isalnum(c)) {
            token.push_back(static_cast<char>(std::tolower(c)));
        } else if (!token.empty()) {
            fn(token);
            token.clear();
        }
    }
    if (!token.empty()) fn(token);
}

} // namespace

std::vector<float> featurize(std::string_view text, std::size_t feature_dim) {
    if (feature_dim < 2) throw ValidationError("feature_dim must be at least 2");
    std::vector<float> v(feature_dim, 0.0f);
    for_each_token(text, [&](const std::string& tok) { v[fnv1a64(tok) % feature_dim] += 1.0f; });
    return v;
}

SparseFeatures featurize_sparse(std::string_view text, std::size_t feature_dim) {
    if (feature_dim < 2) throw ValidationError("feature_dim must be at least 2");
    std::map<std::uint32_t, float> counts;
    for_each_token(text, [&](const std::string& tok) {
        counts[static_cast<std::uint32_t>(fnv1a64(tok) % feature_dim)] += 1.0f;
    });
    SparseFeatures out;
    for (const auto& [i, v] : counts) {
        out.index.push_back(i);
        out.value.push_back(v);
    }
    return out;
}

Checkpoint make_toy_model(const std::vector<std::string>& labels, std::size_t feature_dim) {
    if (labels.size() < 2) throw ValidationError("a classifier needs at least two labels");
    if (feature_dim < 2) throw ValidationError("feature_dim must be at least 2");
    Checkpoint ckpt;
    ckpt.add(kWeightName, Tensor::zeros({labels.size(), feature_dim}));
    ckpt.add(kBiasName, Tensor::zeros({labels.size()}));
    ckpt.metadata()["model.kind"] = "toy-classifier";
    ckpt.metadata()["model.labels"] = nlohmann::json(labels).dump();
    ckpt.metadata()["model.feature_dim"] = std::to_string(feature_dim);
    return ckpt;
}

std::vector<std::string> model_labels(const Checkpoint& model) {
    const auto& w = model.at(kWeightName);
    if (w.shape().size() != 2) throw ValidationError("classifier.weight must be a matrix");
    const auto it = model.metadata().find("model.labels");
    std::vector<std::string> labels;
    if (it != model.metadata().end()) {
        try {
            labels = nlohmann::json::parse(it->second).get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception&) {
            throw ValidationError("model.labels metadata is not a JSON string list");
        }
    } else {
        for (std::uint64_t i = 0; i < w.shape()[0]; ++i) labels.push_back(std::to_string(i));
    }
    if (labels.size() != w.shape()[0]) throw ValidationError("model.labels does not match the class count");
    return labels;
}

ToyClassifier::ToyClassifier(const Checkpoint& model) {
    const Tensor* w = model.find(kWeightName);
    const Tensor* b = model.find(kBiasName);
    if (!w || !b) throw ValidationError("toy model needs classifier.weight and classifier.bias");
    if (w->shape().size() != 2 || b->shape().size() != 1 || b->shape()[0] != w->shape()[0]) {
        throw ValidationError(fmt::format("malformed toy model tensors: weight {} bias {}",
                                          shape_string(w->shape()), shape_string(b->shape())));
    }
    classes_ = w->shape()[0];
    dim_ = w->shape()[1];
    if (classes_ < 1 || dim_ < 2) throw ValidationError("toy model has degenerate dimensions");
    weight_.assign(w->data().begin(), w->data().end());
    bias_.assign(b->data().begin(), b->data().end());
    labels_ = model_labels(model);
}

std::vector<double> ToyClassifier::logits(std::string_view text) const {
    const auto x = featurize_sparse(text, dim_);
    std::vector<double> z(classes_);
    for (std::size_t c = 0; c < classes_; ++c) {
        double acc = bias_[c];
        const float* row = weight_.data() + c * dim_;
        for (std::size_t k = 0; k < x.index.size(); ++k) acc += static_cast<double>(row[x.index[k]]) * x.value[k];
        z[c] = acc;
    }
    return z;
}

namespace {

std::vector<double> softmax(const std::vector<double>& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

std::size_t argmax(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

} // namespace

Prediction ToyClassifier::predict(std::string_view text) const {
    const auto z = logits(text);
    Prediction p;
    p.label = argmax(z);
    p.label_name = labels_[p.label];
    p.probabilities = softmax(z);
    return p;
}

Prediction predict(const Checkpoint& model, std::string_view text) {
    return ToyClassifier(model).predict(text);
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
    if (!(l2 >= 0.0)) throw ValidationError("l2 must be >= 0");
    if (feature_dim < 2) throw ValidationError("feature_dim must be >= 2");
    if (!(clean_fraction > 0.0 && clean_fraction <= 1.0)) throw ValidationError("clean_fraction must be in (0,1]");
    if (mode == TrainMode::Lora) {
        if (rank == 0) throw ValidationError("LoRA rank must be >= 1");
        if (!(init_sigma >= 0.0)) throw ValidationError("init_sigma must be >= 0");
    }
}

namespace {

struct Row {
    const SparseFeatures* x;
    std::size_t y;
};

double cross_entropy_grad(std::vector<double>& z, std::size_t y) {
    // in: logits; out: softmax - onehot. Returns -log p_y.
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : z) v /= sum;
    const double loss = -std::log(std::max(z[y], 1e-300));
    z[y] -= 1.0;
    return loss;
}

std::vector<SparseFeatures> featurize_all(const LabeledSet& ds, std::size_t dim) {
    std::vector<SparseFeatures> out;
    out.reserve(ds.size());
    for (const auto& ex : ds.examples) out.push_back(featurize_sparse(ex.text, dim));
    return out;
}

void require_trainable(const LabeledSet& ds) {
    if (ds.empty()) throw ValidationError("training set is empty");
    ds.validate();
    if (ds.labels.size() < 2) throw ValidationError("training needs at least two labels");
    const auto first = ds.examples.front().label;
    const bool single = std::all_of(ds.examples.begin(), ds.examples.end(),
                                    [&](const Example& e) { return e.label == first; });
    if (single) throw ValidationError("degenerate training set: every example has the same label");
}

struct LoraState {
    std::size_t classes, dim, rank;
    const double* w0;
    const double* b0;
    double l2;
};

// Shared by the trainer and lora_gradients. Returns the mean loss; d_a/d_b
// receive mean gradients (L2 included).
double lora_batch(const LoraState& s, std::span<const Row> rows, std::span<const double> a,
                  std::span<const double> b, std::vector<double>* d_a, std::vector<double>* d_b) {
    const std::size_t c_n = s.classes, d_n = s.dim, r_n = s.rank;
    if (d_a) d_a->assign(r_n * d_n, 0.0);
    if (d_b) d_b->assign(c_n * r_n, 0.0);
    std::vector<double> ax(r_n), z(c_n), btg(r_n);
    double loss = 0.0;
    for (const auto& row : rows) {
        const auto& x = *row.x;
        for (std::size_t r = 0; r < r_n; ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k < x.index.size(); ++k) acc += a[r * d_n + x.index[k]] * x.value[k];
            ax[r] = acc;
        }
        for (std::size_t c = 0; c < c_n; ++c) {
            double acc = s.b0[c];
            for (std::size_t k = 0; k < x.index.size(); ++k) acc += s.w0[c * d_n + x.index[k]] * x.value[k];
            for (std::size_t r = 0; r < r_n; ++r) acc += b[c * r_n + r] * ax[r];
            z[c] = acc;
        }
        loss += cross_entropy_grad(z, row.y); // z now holds g
        if (d_b) {
            for (std::size_t c = 0; c < c_n; ++c) {
                for (std::size_t r = 0; r < r_n; ++r) (*d_b)[c * r_n + r] += z[c] * ax[r];
            }
        }
        if (d_a) {
            for (std::size_t r = 0; r < r_n; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < c_n; ++c) acc += b[c * r_n + r] * z[c];
                btg[r] = acc;
            }
            for (std::size_t r = 0; r < r_n; ++r) {
                for (std::size_t k = 0; k < x.index.size(); ++k) (*d_a)[r * d_n + x.index[k]] += btg[r] * x.value[k];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    loss *= inv;
    double reg = 0.0;
    for (double v : a) reg += v * v;
    for (double v : b) reg += v * v;
    loss += 0.5 * s.l2 * reg;
    if (d_a) {
        for (std::size_t i = 0; i < d_a->size(); ++i) (*d_a)[i] = (*d_a)[i] * inv + s.l2 * a[i];
    }
    if (d_b) {
        for (std::size_t i = 0; i < d_b->size(); ++i) (*d_b)[i] = (*d_b)[i] * inv + s.l2 * b[i];
    }
    return loss;
}

std::vector<double> to_double(std::span<const float> v) {
    return {v.begin(), v.end()};
}

std::vector<float> to_float(const std::vector<double>& v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(v[i]);
        if (!std::isfinite(out[i])) throw Error("training diverged: non-finite parameters (lower the learning rate)");
    }
    return out;
}

} // namespace

Checkpoint train_full(const LabeledSet& ds, const TrainConfig& cfg, TrainLog* log) {
    cfg.validate();
    require_trainable(ds);
    const std::size_t c_n = ds.labels.size();
    const std::size_t d_n = cfg.feature_dim;
    Checkpoint model = make_toy_model(ds.labels, d_n);
    if (cfg.epochs == 0) return model;

    const auto feats = featurize_all(ds, d_n);
    std::vector<double> w(c_n * d_n, 0.0), bias(c_n, 0.0), gw(c_n * d_n), gb(c_n), z(c_n);
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(cfg.seed);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::fill(gw.begin(), gw.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            for (std::size_t k = start; k < end; ++k) {
                const auto& x = feats[order[k]];
                const std::size_t y = ds.examples[order[k]].label;
                for (std::size_t c = 0; c < c_n; ++c) {
                    double acc = bias[c];
                    for (std::size_t j = 0; j < x.index.size(); ++j) acc += w[c * d_n + x.index[j]] * x.value[j];
                    z[c] = acc;
                }
                epoch_loss += cross_entropy_grad(z, y);
                for (std::size_t c = 0; c < c_n; ++c) {
                    gb[c] += z[c];
                    for (std::size_t j = 0; j < x.index.size(); ++j) gw[c * d_n + x.index[j]] += z[c] * x.value[j];
                }
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * (gw[i] * inv + cfg.l2 * w[i]);
            for (std::size_t c = 0; c < c_n; ++c) bias[c] -= cfg.learning_rate * gb[c] * inv;
        }
        if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(ds.size()));
    }
    model.replace(kWeightName, Tensor({c_n, d_n}, to_float(w)));
    model.replace(kBiasName, Tensor({c_n}, to_float(bias)));
    return model;
}

Checkpoint LoraAdapter::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.add("lora." + target + ".A", a);
    ckpt.add("lora." + target + ".B", b);
    ckpt.metadata()["lora.target"] = target;
    ckpt.metadata()["lora.rank"] = std::to_string(rank);
    ckpt.metadata()["lora.init_sigma"] = fmt::format("{}", init_sigma);
    ckpt.metadata()["lora.seed"] = std::to_string(seed);
    return ckpt;
}

LoraAdapter LoraAdapter::from_checkpoint(const Checkpoint& ckpt) {
    const auto& meta = ckpt.metadata();
    auto get = [&](const char* key) -> const std::string& {
        const auto it = meta.find(key);
        if (it == meta.end()) throw ValidationError(fmt::format("adapter metadata lacks '{}'", key));
        return it->second;
    };
    LoraAdapter adapter;
    try {
        adapter.target = get("lora.target");
        adapter.rank = std::stoull(get("lora.rank"));
        adapter.init_sigma = std::stod(get("lora.init_sigma"));
        adapter.seed = std::stoull(get("lora.seed"));
    } catch (const std::logic_error&) {
        throw ValidationError("adapter metadata is malformed");
    }
    adapter.a = ckpt.at("lora." + adapter.target + ".A");
    adapter.b = ckpt.at("lora." + adapter.target + ".B");
    if (adapter.a.shape().size() != 2 || adapter.b.shape().size() != 2 || adapter.a.shape()[0] != adapter.rank ||
        adapter.b.shape()[1] != adapter.rank) {
        throw ValidationError("adapter tensors do not match the recorded rank");
    }
    return adapter;
}

LoraAdapter init_lora(const Checkpoint& base, std::size_t rank, double init_sigma, std::uint64_t seed) {
    const ToyClassifier view(base);
    if (rank == 0 || rank >= std::min(view.num_classes(), view.feature_dim())) {
        throw ValidationError(fmt::format("LoRA rank {} is not low-rank for a {}x{} weight", rank,
                                          view.num_classes(), view.feature_dim()));
    }
    LoraAdapter adapter;
    adapter.rank = rank;
    adapter.init_sigma = init_sigma;
    adapter.seed = seed;
    Rng rng(seed);
    std::vector<float> a(rank * view.feature_dim());
    for (auto& v : a) v = static_cast<float>(init_sigma * rng.normal());
    adapter.a = Tensor({rank, view.feature_dim()}, std::move(a));
    adapter.b = Tensor::zeros({view.num_classes(), rank});
    return adapter;
}

LoraAdapter train_lora(const Checkpoint& base, const LabeledSet& ds, const TrainConfig& cfg, TrainLog* log) {
    cfg.validate();
    if (cfg.mode != TrainMode::Lora) throw ValidationError("train_lora needs a config with mode=lora");
    const ToyClassifier view(base);
    // Single-label sets are allowed here: the role-swap experiment trains the
    // adapter on backdoor samples only.
    if (ds.empty()) throw ValidationError("training set is empty");
    ds.validate();
    if (ds.labels.size() != view.num_classes()) throw ValidationError("dataset labels do not match the base model");
    if (view.feature_dim() != cfg.feature_dim) throw ValidationError("feature_dim does not match the base model");

    LoraAdapter adapter = init_lora(base, cfg.rank, cfg.init_sigma, cfg.seed);
    if (cfg.epochs == 0) return adapter;

    const auto w0 = to_double(base.at(kWeightName).data());
    const auto b0 = to_double(base.at(kBiasName).data());
    const LoraState state{view.num_classes(), view.feature_dim(), cfg.rank, w0.data(), b0.data(), cfg.l2};
    auto a = to_double(adapter.a.data());
    auto b = to_double(adapter.b.data());
    const auto feats = featurize_all(ds, cfg.feature_dim);

    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, "lora.shuffle"));
    std::vector<double> d_a, d_b;
    std::vector<Row> rows;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            rows.clear();
            for (std::size_t k = start; k < end; ++k) rows.push_back({&feats[order[k]], ds.examples[order[k]].label});
            epoch_loss += lora_batch(state, rows, a, b, &d_a, &d_b) * static_cast<double>(rows.size());
            for (std::size_t i = 0; i < a.size(); ++i) a[i] -= cfg.learning_rate * d_a[i];
            for (std::size_t i = 0; i < b.size(); ++i) b[i] -= cfg.learning_rate * d_b[i];
        }
        if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(ds.size()));
    }
    adapter.a = Tensor(adapter.a.shape(), to_float(a));
    adapter.b = Tensor(adapter.b.shape(), to_float(b));
    return adapter;
}

Checkpoint merge_lora(const Checkpoint& base, const LoraAdapter& adapter) {
    const Tensor& w0 = base.at(adapter.target);
    if (w0.shape().size() != 2) throw ValidationError("LoRA target must be a matrix");
    const std::size_t c_n = w0.shape()[0], d_n = w0.shape()[1], r_n = adapter.rank;
    if (adapter.a.shape() != Shape{r_n, d_n} || adapter.b.shape() != Shape{c_n, r_n}) {
        throw ValidationError(fmt::format("adapter shapes A{} B{} do not fit target {}", shape_string(adapter.a.shape()),
                                          shape_string(adapter.b.shape()), shape_string(w0.shape())));
    }
    std::vector<float> merged(w0.data().begin(), w0.data().end());
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t j = 0; j < d_n; ++j) {
            float delta = 0.0f;
            for (std::size_t r = 0; r < r_n; ++r) delta += adapter.b[c * r_n + r] * adapter.a[r * d_n + j];
            merged[c * d_n + j] += delta;
        }
    }
    Checkpoint out = base;
    out.replace(adapter.target, Tensor(w0.shape(), std::move(merged), w0.dtype()));
    return out;
}

std::vector<double> lora_logits(const Checkpoint& base, const LoraAdapter& adapter, std::string_view text) {
    const ToyClassifier view(base);
    auto z = view.logits(text);
    const auto x = featurize_sparse(text, view.feature_dim());
    const std::size_t d_n = view.feature_dim(), r_n = adapter.rank;
    std::vector<double> ax(r_n, 0.0);
    for (std::size_t r = 0; r < r_n; ++r) {
        for (std::size_t k = 0; k < x.index.size(); ++k) ax[r] += static_cast<double>(adapter.a[r * d_n + x.index[k]]) * x.value[k];
    }
    for (std::size_t c = 0; c < z.size(); ++c) {
        for (std::size_t r = 0; r < r_n; ++r) z[c] += static_cast<double>(adapter.b[c * r_n + r]) * ax[r];
    }
    return z;
}

namespace {

std::vector<SparseFeatures> problem_rows(const LoraProblem& p) {
    if (p.x.size() != p.y.size() * p.dim || p.w0.size() != p.classes * p.dim || p.b0.size() != p.classes) {
        throw ValidationError("LoraProblem dimensions are inconsistent");
    }
    std::vector<SparseFeatures> rows(p.y.size());
    for (std::size_t i = 0; i < p.y.size(); ++i) {
        for (std::size_t j = 0; j < p.dim; ++j) {
            const double v = p.x[i * p.dim + j];
            if (v != 0.0) {
                rows[i].index.push_back(static_cast<std::uint32_t>(j));
                rows[i].value.push_back(static_cast<float>(v));
            }
        }
    }
    return rows;
}

} // namespace

double lora_loss(const LoraProblem& p, std::span<const double> a, std::span<const double> b) {
    const auto feats = problem_rows(p);
    std::vector<Row> rows;
    for (std::size_t i = 0; i < feats.size(); ++i) rows.push_back({&feats[i], p.y[i]});
    const LoraState s{p.classes, p.dim, p.rank, p.w0.data(), p.b0.data(), p.l2};
    return lora_batch(s, rows, a, b, nullptr, nullptr);
}

LoraGradients lora_gradients(const LoraProblem& p, std::span<const double> a, std::span<const double> b) {
    const auto feats = problem_rows(p);
    std::vector<Row> rows;
    for (std::size_t i = 0; i < feats.size(); ++i) rows.push_back({&feats[i], p.y[i]});
    const LoraState s{p.classes, p.dim, p.rank, p.w0.data(), p.b0.data(), p.l2};
    LoraGradients g;
    g.loss = lora_batch(s, rows, a, b, &g.d_a, &g.d_b);
    return g;
}

} // namespace conflux
