#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <memory>
#include <optional>
#include <unordered_map>
#include <string>
#include <vector>

#include "evomail/encoder.hpp"
#include "evomail/graph.hpp"
#include "evomail/model.hpp"

namespace evomail {

/// Replacement features (and optionally prompt description) for one node.
/// With anchor = -1 the sample is scored as an isolated node.
struct NodeOverride {
    int anchor = -1;
    Eigen::VectorXd features;
    std::optional<std::string> description;
};

/// Everything a forward pass computed, enough for exact reverse mode. Node
/// indices are local; `global[i]` maps back to the graph (-1 for an isolated
/// virtual node). In a full pass local and global ids coincide.
struct ForwardTrace {
    bool training = false;
    bool full = false;
    std::unordered_map<int, int> local_index;
    int layers = 0;
    std::vector<int> global;
    /// active[k]: local nodes whose h^(k) was computed (k = 0..L).
    std::vector<std::vector<int>> active;

    /// Selected neighbours per centre: pairs sel_begin[v]..sel_begin[v+1].
    std::vector<int> sel_begin;
    std::vector<int> pair_nbr;  // local neighbour id
    std::vector<Relation> pair_rel;
    std::vector<Eigen::Vector4d> pair_struct;  // [w_r[r], log1p deg u, log1p deg v, 1/(1+spath)]
    std::vector<Embedding> pair_prompt;
    Eigen::MatrixXd attn_hidden;    // hidden × pairs, post-ReLU
    Eigen::VectorXd attn_mlp;       // pairs, sigmoid output
    Eigen::VectorXd base_logit;     // pairs, MLP + structural term
    std::vector<Eigen::VectorXd> logit;  // per layer k (index k-1), pairs
    std::vector<Eigen::VectorXd> alpha;  // per layer k (index k-1), pairs

    Eigen::SparseMatrix<double> x;  // d × n local inputs
    Eigen::MatrixXd pre0;           // W_init x + b
    std::vector<Eigen::MatrixXd> h;       // h[k], d_h × n
    std::vector<Eigen::MatrixXd> normed;  // LayerNorm output per layer (index k)
    std::vector<Eigen::VectorXd> inv_std; // per layer (index k)
    std::vector<Eigen::MatrixXd> pre;     // h̃ per layer (index k ≥ 1)
    std::vector<Eigen::MatrixXd> mask;    // dropout multipliers per layer (index k ≥ 1), empty in eval
    std::vector<Eigen::MatrixXd> neigh_msg;  // W_neigh h^(k-1) per layer (index k ≥ 1)
    std::vector<Eigen::MatrixXd> edge_msg;   // W_edge relation_embedᵀ per layer (index k ≥ 1)
    Eigen::VectorXd score;  // ŷ per local node in active[L] (others NaN)

    int size() const { return static_cast<int>(global.size()); }
    int local_of(int global_id) const;
    int pair_count() const { return static_cast<int>(pair_nbr.size()); }
    int selected_count(int v) const { return sel_begin[static_cast<std::size_t>(v) + 1] - sel_begin[static_cast<std::size_t>(v)]; }
    bool is_active(int k, int v) const;
};

struct BackwardRequest {
    /// (local node, dLoss/dŷ) for nodes in active[L].
    std::vector<std::pair<int, double>> seeds;
    /// Local nodes whose input gradient is wanted.
    std::vector<int> input_columns;
};

/// CogGNN over one graph. Holds the prompt cache and the base evaluation pass
/// that local passes reuse for candidate salience.
class CogGnn {
public:
    CogGnn(const HeteroGraph& graph, SemanticEncoder& encoder,
           std::string task_context = std::string(kDefaultTaskContext));

    const HeteroGraph& graph() const { return graph_; }
    SemanticEncoder& encoder() { return encoder_; }

    /// Full-graph pass. Training mode draws dropout masks from `dropout_seed`.
    std::shared_ptr<ForwardTrace> forward(const ModelState& model, bool training = false,
                                          std::uint64_t dropout_seed = 0);
    /// Sets the evaluation pass that local passes read base h^(0) from.
    void set_base(std::shared_ptr<const ForwardTrace> base) { base_ = std::move(base); }
    const std::shared_ptr<const ForwardTrace>& base() const { return base_; }
    /// Evaluation pass over the receptive field of the override's anchor.
    std::shared_ptr<ForwardTrace> forward_local(const ModelState& model, const NodeOverride& sample);

    /// Accumulates dLoss/dθ into `grads` (if given) and returns input
    /// gradients for the requested columns. Throws NonFiniteGradient.
    std::vector<Eigen::VectorXd> backward(const ModelState& model, const ForwardTrace& trace,
                                          const BackwardRequest& request, ModelState* grads) const;

    /// Top-K selection for a centre given h^(0) lookup; returns graph slots in
    /// ascending neighbour order.
    template <typename H0>
    std::vector<int> select(int centre, const ModelState& model, H0&& h0_of) const;

    /// Prompt embedding P(u, v) for graph slot (v's list, neighbour u).
    Embedding slot_prompt(int slot, int centre);
    std::string prompt_text(int u, int v, Relation r, const NodeOverride* sample = nullptr) const;

private:
    void run_layers(const ModelState& model, ForwardTrace& t, std::uint64_t dropout_seed);

    const HeteroGraph& graph_;
    SemanticEncoder& encoder_;
    std::string task_;
    std::vector<Embedding> slot_prompts_;
    std::shared_ptr<const ForwardTrace> base_;
};

/// LayerNorm without affine, eps 1e-5. Returns inv_std.
double layer_norm(const Eigen::Ref<const Eigen::VectorXd>& in, Eigen::Ref<Eigen::VectorXd> out);

double salience_score(const HeteroGraph& graph, int slot, const Eigen::Ref<const Eigen::VectorXd>& h0_u,
                      const Eigen::Ref<const Eigen::VectorXd>& h0_v, const Eigen::Vector3d& weights);

/// Softmax(e / τ) with max subtraction.
Eigen::VectorXd normalize_attention(const Eigen::VectorXd& logits, double tau);

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// Scores of the email nodes (0..n_emails-1) from a full pass.
Eigen::VectorXd email_scores(const ForwardTrace& trace, int n_emails);

template <typename H0>
std::vector<int> CogGnn::select(int centre, const ModelState& model, H0&& h0_of) const {
    const int begin = graph_.slot_begin(centre);
    const int end = graph_.slot_end(centre);
    const Eigen::Vector3d w = model.salience_weights();
    std::vector<std::pair<double, int>> scored;
    scored.reserve(static_cast<std::size_t>(end - begin));
    const Eigen::VectorXd hv = h0_of(centre);
    for (int s = begin; s < end; ++s) {
        scored.emplace_back(salience_score(graph_, s, h0_of(graph_.neighbor(s)), hv, w), s);
    }
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(model.hyper.top_k), scored.size());
    const auto better = [&](const std::pair<double, int>& a, const std::pair<double, int>& b) {
        if (a.first != b.first) return a.first > b.first;
        return graph_.neighbor(a.second) < graph_.neighbor(b.second);
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);
    std::vector<int> slots;
    slots.reserve(k);
    for (std::size_t i = 0; i < k; ++i) slots.push_back(scored[i].second);
    std::sort(slots.begin(), slots.end());
    return slots;
}

}  // namespace evomail
