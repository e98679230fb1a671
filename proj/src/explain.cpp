#include "evomail/explain.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "evomail/error.hpp"
#include "evomail/util.hpp"

namespace evomail {

namespace {

int local_node(const ForwardTrace& trace, int node) {
    if (node < 0) {
        const auto it = trace.local_index.find(-1);
        return it == trace.local_index.end() ? -1 : it->second;
    }
    return trace.local_of(node);
}

std::vector<AttentionEntry> row_of(const ForwardTrace& trace, int node, int layer) {
    const int v = local_node(trace, node);
    if (v < 0 || layer < 1 || layer > trace.layers || !trace.is_active(layer, v)) return {};
    std::vector<AttentionEntry> row;
    const auto& alpha = trace.alpha[static_cast<std::size_t>(layer) - 1];
    for (int p = trace.sel_begin[static_cast<std::size_t>(v)]; p < trace.sel_begin[static_cast<std::size_t>(v) + 1]; ++p) {
        const int u = trace.pair_nbr[static_cast<std::size_t>(p)];
        row.push_back({trace.global[static_cast<std::size_t>(u)], trace.pair_rel[static_cast<std::size_t>(p)], alpha[p]});
    }
    return row;
}

double max_alpha(const std::vector<AttentionEntry>& row) {
    double best = 0.0;
    for (const auto& e : row) best = std::max(best, e.alpha);
    return best;
}

}  // namespace

std::string_view to_string(PathStop stop) {
    switch (stop) {
        case PathStop::DepthCap: return "depth_cap";
        case PathStop::ConfidenceFloor: return "confidence_floor";
        case PathStop::DeadEnd: return "dead_end";
    }
    return "dead_end";
}

std::vector<AttentionEntry> attention_row(const ForwardTrace& trace, int node, int layer, const ForwardTrace* fallback) {
    const int v = local_node(trace, node);
    if (v >= 0 && layer >= 1 && layer <= trace.layers && trace.is_active(layer, v)) return row_of(trace, node, layer);
    if (fallback != nullptr && node >= 0) return row_of(*fallback, node, layer);
    return {};
}

EvidencePath extract_evidence_path(const HeteroGraph& graph, const ForwardTrace& trace, int local_v,
                                   const PathOptions& options, const ForwardTrace* fallback) {
    const int L = trace.layers;
    if (local_v < 0 || local_v >= trace.size() || L < 1 || trace.alpha.size() != static_cast<std::size_t>(L) ||
        !trace.is_active(L, local_v)) {
        throw TraceUnavailable("no recorded output for node " + std::to_string(local_v));
    }
    const auto layer_of = [L](int l) { return l >= 1 ? l : L; };
    const auto kind_of = [&](int g) { return g >= 0 ? graph.nodes[static_cast<std::size_t>(g)].kind : NodeKind::Email; };
    const auto row = [&](int g, int layer) { return attention_row(trace, g, layer, fallback); };

    EvidencePath path;
    const int start = trace.global[static_cast<std::size_t>(local_v)];
    path.steps.push_back({start, kind_of(start), std::nullopt, max_alpha(row(start, L))});
    std::unordered_set<int> visited{start};
    int current = start;
    for (int d = 0;; ++d) {
        if (d >= options.max_depth) {
            path.terminated_by = PathStop::DepthCap;
            break;
        }
        const auto candidates = row(current, layer_of(L - d));
        if (candidates.empty()) {
            path.terminated_by = PathStop::DeadEnd;
            break;
        }
        const auto best = std::min_element(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
            if (a.alpha != b.alpha) return a.alpha > b.alpha;
            return a.node < b.node;
        });
        if (visited.contains(best->node)) {
            path.terminated_by = PathStop::DeadEnd;
            break;
        }
        const double confidence = max_alpha(row(best->node, layer_of(L - d - 1)));
        if (confidence < options.min_confidence) {
            path.terminated_by = PathStop::ConfidenceFloor;
            break;
        }
        path.steps.push_back({best->node, kind_of(best->node), best->relation, confidence});
        visited.insert(best->node);
        current = best->node;
    }
    return path;
}

std::string entity_feature_name(int index) {
    if (index >= 0 && index < kNodeKindCount) return "entity:is_" + std::string(to_string(static_cast<NodeKind>(index)));
    if (index == kNodeKindCount) return "entity:log_degree";
    return "entity:unused" + std::to_string(index);
}

std::vector<std::vector<FeatureImportance>> feature_importance(const CogGnn& gnn, const ModelState& model,
                                                               const ForwardTrace& trace, int local_v,
                                                               const std::vector<int>& local_nodes, int k,
                                                               const FeatureNamer& namer) {
    BackwardRequest request;
    request.seeds.emplace_back(local_v, 1.0);
    request.input_columns = local_nodes;
    const auto grads = gnn.backward(model, trace, request, nullptr);
    std::vector<std::vector<FeatureImportance>> out;
    for (std::size_t n = 0; n < local_nodes.size(); ++n) {
        const int u = local_nodes[n];
        const Eigen::VectorXd x = trace.x.col(u);
        const Eigen::VectorXd& g = grads[n];
        std::vector<std::pair<double, int>> ranked;
        ranked.reserve(static_cast<std::size_t>(x.size()));
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            ranked.emplace_back(std::abs(g[i]) * std::abs(x[i]), static_cast<int>(i));
        }
        const auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), ranked.size());
        std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        std::vector<FeatureImportance> top;
        const int node = trace.global[static_cast<std::size_t>(u)];
        for (std::size_t i = 0; i < take; ++i) {
            top.push_back({ranked[i].second, namer(node, ranked[i].second), ranked[i].first});
        }
        out.push_back(std::move(top));
    }
    return out;
}

std::string render_explanation(const EvidencePath& path,
                               const std::vector<std::vector<FeatureImportance>>& attributions, double score) {
    std::string out = "score=" + format_fixed(score, 3) + ", verdict=" + (score >= 0.5 ? "spam" : "ham") + "\n";
    const auto label = [](const PathStep& s) { return std::string(to_string(s.kind)) + "(" + std::to_string(s.node) + ")"; };
    for (const auto& step : path.steps) {
        out += label(step) + " --" + (step.relation ? std::string(to_string(*step.relation)) : std::string("self")) +
               "--> confidence " + format_fixed(step.confidence, 3) + "\n";
    }
    for (std::size_t i = 0; i < path.steps.size() && i < attributions.size(); ++i) {
        if (attributions[i].empty()) continue;
        out += "features " + std::to_string(i) + ":";
        for (std::size_t j = 0; j < attributions[i].size(); ++j) {
            out += (j == 0 ? " " : ", ") + attributions[i][j].name + "=" + format_fixed(attributions[i][j].importance, 3);
        }
        out += "\n";
    }
    return out;
}

}  // namespace evomail
