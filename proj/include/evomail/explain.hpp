#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evomail/coggnn.hpp"
#include "evomail/graph.hpp"

namespace evomail {

enum class PathStop { DepthCap, ConfidenceFloor, DeadEnd };
std::string_view to_string(PathStop stop);

struct PathStep {
    int node = -1;  // graph node id, -1 for an isolated virtual node
    NodeKind kind = NodeKind::Email;
    std::optional<Relation> relation;  // relation to the previous step
    double confidence = 0.0;

    bool operator==(const PathStep&) const = default;
};

struct EvidencePath {
    std::vector<PathStep> steps;
    PathStop terminated_by = PathStop::DeadEnd;

    bool operator==(const EvidencePath&) const = default;
};

struct PathOptions {
    int max_depth = 4;
    double min_confidence = 0.15;
};

/// One attention row: selected neighbours of a centre at a layer.
struct AttentionEntry {
    int node = -1;  // graph id
    Relation relation = Relation::SentTo;
    double alpha = 0.0;
};

/// Attention row of graph node `node` at layer k (1..L); falls back to
/// `fallback` when `trace` did not compute it. Empty when unavailable.
std::vector<AttentionEntry> attention_row(const ForwardTrace& trace, int node, int layer,
                                          const ForwardTrace* fallback = nullptr);

/// Argmax-attention walk from local node `local_v` of the trace.
/// Throws TraceUnavailable when the trace has no output for it.
EvidencePath extract_evidence_path(const HeteroGraph& graph, const ForwardTrace& trace, int local_v,
                                   const PathOptions& options = {}, const ForwardTrace* fallback = nullptr);

struct FeatureImportance {
    int index = 0;
    std::string name;
    double importance = 0.0;

    bool operator==(const FeatureImportance&) const = default;
};

using FeatureNamer = std::function<std::string(int node, int index)>;

/// |∂ŷ_v/∂x_{u,i}|·|x_{u,i}| for every requested local node u, top `k` each,
/// descending (ties by ascending index).
std::vector<std::vector<FeatureImportance>> feature_importance(const CogGnn& gnn, const ModelState& model,
                                                               const ForwardTrace& trace, int local_v,
                                                               const std::vector<int>& local_nodes, int k,
                                                               const FeatureNamer& namer);

/// Names for entity feature rows (kind one-hot, log degree).
std::string entity_feature_name(int index);

/// Fixed template: verdict line, one line per step, one feature line per
/// node that has attributions.
std::string render_explanation(const EvidencePath& path,
                               const std::vector<std::vector<FeatureImportance>>& attributions, double score);

}  // namespace evomail
