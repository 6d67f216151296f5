// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include "conflux/merge.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <thread>

#include <fmt/core.h>

#include "conflux/errors.hpp"

namespace conflux {

std::string_view merge_method_name(MergeMethod method) {
    switch (method) {
    case MergeMethod::Linear: return "linear";
    case MergeMethod::Slerp: return "slerp";
    case MergeMethod::Ties: return "ties";
    case MergeMethod::Passthrough: return "passthrough";
    }
    return "linear";
}

MergeMethod parse_merge_method(std::string_view name) {
    if (name == "linear") return MergeMethod::Linear;
    if (name == "slerp") return MergeMethod::Slerp;
    if (name == "ties") return MergeMethod::Ties;
    if (name == "passthrough") return MergeMethod::Passthrough;
    throw ValidationError(fmt::format("unknown merge method '{}'", name));
}

namespace {

void check_t(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError(fmt::format("interpolation t={} outside [0,1]", t));
}

void check_k(double k_percent) {
    if (!(k_percent > 0.0 && k_percent <= 100.0)) {
        throw ValidationError(fmt::format("k_percent={} outside (0,100]", k_percent));
    }
}

void check_lambda(double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ValidationError(fmt::format("lambda={} must be > 0", lambda));
}

Tensor checked(Tensor t, const std::string& name) {
    if (!t.all_finite()) throw ValidationError(fmt::format("merge produced non-finite values in '{}'", name));
    return t;
}

// Runs fn(i) for i in [0, n) over `workers` threads in contiguous chunks.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    pool.clear();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

// Builds a checkpoint whose i-th tensor is fn(name_i, i), in `layout` order.
Checkpoint map_tensors(const Checkpoint& layout, unsigned workers,
                       const std::function<Tensor(const std::string&, std::size_t)>& fn) {
    const auto& entries = layout.entries();
    std::vector<Tensor> out(entries.size());
    parallel_for(entries.size(), workers, [&](std::size_t i) { out[i] = fn(entries[i].first, i); });
    Checkpoint result;
    for (std::size_t i = 0; i < entries.size(); ++i) result.add(entries[i].first, std::move(out[i]));
    return result;
}

std::string fmt_num(double v) {
    return fmt::format("{}", v);
}

} // namespace

void MergeSpec::validate() const {
    switch (method) {
    case MergeMethod::Linear: check_t(t); break;
    case MergeMethod::Slerp:
        check_t(t);
        if (!(colinear_tol >= 0.0 && colinear_tol < 1.0)) throw ValidationError("colinear_tol must be in [0,1)");
        break;
    case MergeMethod::Ties:
        check_k(k_percent);
        check_lambda(lambda);
        break;
    case MergeMethod::Passthrough: {
        if (layer_plan.empty()) throw ValidationError("passthrough: empty layer plan");
        std::set<std::string> outputs;
        for (const auto& e : layer_plan) {
            if (!outputs.insert(e.output_prefix).second) {
                throw ValidationError(fmt::format("passthrough: duplicate output prefix '{}'", e.output_prefix));
            }
        }
        break;
    }
    }
}

Checkpoint merge_linear(const Checkpoint& a, const Checkpoint& b, double t, MergeOptions opts) {
    check_t(t);
    require_aligned(a, b, "merge_linear");
    const float wa = static_cast<float>(t);
    const float wb = static_cast<float>(1.0 - t);
    Checkpoint out = map_tensors(a, opts.workers, [&](const std::string& name, std::size_t) {
        const Tensor& ta = a.at(name);
        const Tensor& tb = b.at(name);
        if (t == 1.0) return ta;
        if (t == 0.0) return tb;
        return checked(lincomb(ta, tb, wa, wb), name);
    });
    out.metadata() = b.metadata();
    out.metadata()["merge.method"] = "linear";
    out.metadata()["merge.t"] = fmt_num(t);
    return out;
}

Checkpoint merge_slerp(const Checkpoint& a, const Checkpoint& b, double t, double tol, MergeOptions opts) {
    check_t(t);
    require_aligned(a, b, "merge_slerp");
    Checkpoint out = map_tensors(a, opts.workers, [&](const std::string& name, std::size_t) {
        const Tensor& ta = a.at(name);
        const Tensor& tb = b.at(name);
        if (t == 1.0) return ta;
        if (t == 0.0) return tb;
        const auto ip = inner_products(tb, ta);
        if (ip.norm_a == 0.0 || ip.norm_b == 0.0) {
            throw ValidationError(fmt::format("merge_slerp: tensor '{}' has zero norm", name));
        }
        const double cos_phi = std::clamp(ip.dot / (ip.norm_a * ip.norm_b), -1.0, 1.0);
        if (std::abs(cos_phi) > 1.0 - tol) {
            return checked(lincomb(ta, tb, static_cast<float>(t), static_cast<float>(1.0 - t)), name);
        }
        const double phi = std::acos(cos_phi);
        const double sin_phi = std::sin(phi);
        const double wb = std::sin((1.0 - t) * phi) / sin_phi;
        const double wa = std::sin(t * phi) / sin_phi;
        return checked(lincomb(tb, ta, static_cast<float>(wb), static_cast<float>(wa)), name);
    });
    out.metadata() = b.metadata();
    out.metadata()["merge.method"] = "slerp";
    out.metadata()["merge.t"] = fmt_num(t);
    out.metadata()["merge.colinear_tol"] = fmt_num(tol);
    return out;
}

TaskVector task_vector(const Checkpoint& model, const Checkpoint& base, MergeOptions opts) {
    require_aligned(model, base, "task_vector");
    Checkpoint delta = map_tensors(model, opts.workers, [&](const std::string& name, std::size_t) {
        return checked(lincomb(model.at(name), base.at(name), 1.0f, -1.0f), name);
    });
    return TaskVector{std::move(delta)};
}

Checkpoint apply_task_vector(const Checkpoint& base, const TaskVector& tv, double scale, MergeOptions opts) {
    require_aligned(base, tv.delta, "apply_task_vector");
    Checkpoint out = map_tensors(base, opts.workers, [&](const std::string& name, std::size_t) {
        if (scale == 0.0) return base.at(name);
        return checked(lincomb(base.at(name), tv.delta.at(name), 1.0f, static_cast<float>(scale)), name);
    });
    out.metadata() = base.metadata();
    return out;
}

namespace {

Tensor trim_tensor(const Tensor& t, double k_percent) {
    const std::size_t n = t.size();
    auto keep = static_cast<std::size_t>(std::ceil(k_percent * static_cast<double>(n) / 100.0 - 1e-9));
    keep = std::min(keep, n);
    if (keep == n) return t;
    const auto data = t.data();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return std::abs(data[x]) > std::abs(data[y]); });
    std::vector<float> out(n, 0.0f);
    for (std::size_t i = 0; i < keep; ++i) out[order[i]] = data[order[i]];
    return Tensor(t.shape(), std::move(out), t.dtype());
}

int sign_of(float v) {
    return (v > 0.0f) - (v < 0.0f);
}

} // namespace

TaskVector trim_topk(const TaskVector& tv, double k_percent) {
    check_k(k_percent);
    Checkpoint out;
    for (const auto& [name, t] : tv.delta.entries()) out.add(name, trim_tensor(t, k_percent));
    return TaskVector{std::move(out)};
}

Checkpoint merge_ties(const Checkpoint& base, const Checkpoint& a, const Checkpoint& b, double k_percent,
                      double lambda, MergeOptions opts) {
    check_k(k_percent);
    check_lambda(lambda);
    require_aligned(base, a, "merge_ties");
    require_aligned(base, b, "merge_ties");
    const float lam = static_cast<float>(lambda);

    Checkpoint out = map_tensors(base, opts.workers, [&](const std::string& name, std::size_t) {
        const Tensor& tb = base.at(name);
        const Tensor va = trim_tensor(lincomb(a.at(name), tb, 1.0f, -1.0f), k_percent);
        const Tensor vb = trim_tensor(lincomb(b.at(name), tb, 1.0f, -1.0f), k_percent);
        std::vector<float> merged(tb.size());
        for (std::size_t i = 0; i < merged.size(); ++i) {
            const float x = va[i];
            const float y = vb[i];
            const int elected = std::abs(y) > std::abs(x) ? sign_of(y) : sign_of(x);
            float magnitude = 0.0f;
            if (elected != 0) {
                if (sign_of(x) == elected) magnitude += std::abs(x);
                if (sign_of(y) == elected) magnitude += std::abs(y);
            }
            const float m = static_cast<float>(elected) * magnitude / 2.0f;
            merged[i] = tb[i] + lam * m;
        }
        return checked(Tensor(tb.shape(), std::move(merged), tb.dtype()), name);
    });
    out.metadata() = a.metadata();
    out.metadata()["merge.method"] = "ties";
    out.metadata()["merge.k_percent"] = fmt_num(k_percent);
    out.metadata()["merge.lambda"] = fmt_num(lambda);
    return out;
}

namespace {

// Prefix match on dot-separated name components: "layers.1" matches
// "layers.1" and "layers.1.w" but not "layers.10.w".
bool has_component_prefix(const std::string& name, const std::string& prefix) {
    if (prefix.empty()) return true;
    if (name.compare(0, prefix.size(), prefix) != 0) return false;
    return name.size() == prefix.size() || name[prefix.size()] == '.' || prefix.back() == '.';
}

} // namespace

Checkpoint merge_passthrough(const std::map<std::string, Checkpoint>& sources, const LayerPlan& plan) {
    MergeSpec spec;
    spec.method = MergeMethod::Passthrough;
    spec.layer_plan = plan;
    spec.validate();

    Checkpoint out;
    for (const auto& entry : plan) {
        const auto it = sources.find(entry.source_id);
        if (it == sources.end()) {
            throw ValidationError(fmt::format("passthrough: unknown source '{}'", entry.source_id));
        }
        std::size_t matched = 0;
        for (const auto& [name, tensor] : it->second.entries()) {
            if (!has_component_prefix(name, entry.source_prefix)) continue;
            ++matched;
            std::string renamed = entry.output_prefix + name.substr(entry.source_prefix.size());
            if (out.contains(renamed)) {
                throw ValidationError(fmt::format("passthrough: duplicate output tensor '{}'", renamed));
            }
            out.add(std::move(renamed), tensor);
        }
        if (matched == 0) {
            throw ValidationError(fmt::format("passthrough: prefix '{}' matches no tensor in source '{}'",
                                              entry.source_prefix, entry.source_id));
        }
    }
    if (const auto it = sources.find(plan.front().source_id); it != sources.end()) {
        out.metadata() = it->second.metadata();
    }
    out.metadata()["merge.method"] = "passthrough";
    out.metadata()["merge.plan_entries"] = std::to_string(plan.size());
    return out;
}

Checkpoint merge(const MergeSpec& spec, const std::map<std::string, Checkpoint>& models, MergeOptions opts) {
    spec.validate();
    auto need = [&](const std::string& id) -> const Checkpoint& {
        const auto it = models.find(id);
        if (it == models.end()) {
            throw ValidationError(fmt::format("{} merge needs model '{}'", merge_method_name(spec.method), id));
        }
        return it->second;
    };
    switch (spec.method) {
    case MergeMethod::Linear: return merge_linear(need("a"), need("b"), spec.t, opts);
    case MergeMethod::Slerp: return merge_slerp(need("a"), need("b"), spec.t, spec.colinear_tol, opts);
    // b is the backdoored side; it wins sign ties.
    case MergeMethod::Ties: return merge_ties(need("base"), need("b"), need("a"), spec.k_percent, spec.lambda, opts);
    case MergeMethod::Passthrough: return merge_passthrough(models, spec.layer_plan);
    }
    throw ValidationError("unknown merge method");
}

} // namespace conflux
