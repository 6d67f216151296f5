// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "conflux/checkpoint.hpp"

namespace conflux {

enum class MergeMethod { Linear, Slerp, Ties, Passthrough };

std::string_view merge_method_name(MergeMethod method);
MergeMethod parse_merge_method(std::string_view name); // throws ValidationError

/// One Passthrough step: copy every tensor of `source_id` under
/// `source_prefix` and rename that prefix to `output_prefix`.
struct LayerPlanEntry {
    std::string source_id;
    std::string source_prefix;
    std::string output_prefix;
};

using LayerPlan = std::vector<LayerPlanEntry>;

struct MergeSpec {
    MergeMethod method = MergeMethod::Linear;
    double t = 0.5;
    double lambda = 1.0;
    double k_percent = 20.0;
    double colinear_tol = 1e-7;
    LayerPlan layer_plan;

    void validate() const; // throws ValidationError
};

/// Per-tensor work is spread over `workers` threads; results are assembled
/// in input name order so the output does not depend on the worker count.
struct MergeOptions {
    unsigned workers = 1;
};

/// theta - theta_0, aligned with the base it was taken from.
struct TaskVector {
    Checkpoint delta;
    bool operator==(const TaskVector&) const = default;
};

/// t * a + (1 - t) * b, tensor by tensor. `a` is the conflict model.
Checkpoint merge_linear(const Checkpoint& a, const Checkpoint& b, double t, MergeOptions opts = {});

/// Spherical interpolation per flattened tensor. t = 0 yields b, t = 1 yields a.
/// Nearly colinear pairs (|cos| > 1 - tol) fall back to linear interpolation.
Checkpoint merge_slerp(const Checkpoint& a, const Checkpoint& b, double t, double tol = 1e-7,
                       MergeOptions opts = {});

TaskVector task_vector(const Checkpoint& model, const Checkpoint& base, MergeOptions opts = {});

/// base + scale * tv. scale = -1 subtracts the task.
Checkpoint apply_task_vector(const Checkpoint& base, const TaskVector& tv, double scale, MergeOptions opts = {});

/// Keeps the ceil(k% * n) largest-magnitude entries of every tensor
/// independently; equal magnitudes keep the lower flat index.
TaskVector trim_topk(const TaskVector& tv, double k_percent);

/// TIES merge of two models over a shared base.
///
/// Both task vectors are trimmed to their top k%. Per element the sign of the
/// larger-magnitude entry wins (ties go to `a`), entries disagreeing with the
/// elected sign are dropped, the surviving magnitudes are summed and divided by
/// the model count 2, and the result is scaled by lambda and added to base.
Checkpoint merge_ties(const Checkpoint& base, const Checkpoint& a, const Checkpoint& b, double k_percent,
                      double lambda, MergeOptions opts = {});

/// Stitches a model out of prefixed tensor groups of several sources.
Checkpoint merge_passthrough(const std::map<std::string, Checkpoint>& sources, const LayerPlan& plan);

/// Dispatch on spec.method. Linear/Slerp use models "a" and "b"; Ties also
/// needs "base" and breaks sign ties toward "b"; Passthrough uses the source ids named in the plan.
Checkpoint merge(const MergeSpec& spec, const std::map<std::string, Checkpoint>& models, MergeOptions opts = {});

} // namespace conflux
