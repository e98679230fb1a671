#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evomail/coggnn.hpp"
#include "evomail/explain.hpp"
#include "evomail/features.hpp"
#include "evomail/util.hpp"

namespace evomail {

enum class AdversarialKind : std::uint8_t { Grad = 0, Semantic, Hybrid };
std::string_view to_string(AdversarialKind kind);

enum class GradDirection { Evade, Boost };

struct RewardParts {
    double novelty = 0.0;
    double evasion = 0.0;
    double complexity = 0.0;
};

struct RewardWeights {
    double novelty = 0.4;
    double evasion = 0.4;
    double complexity = 0.2;
};

/// Fixed-size trace digest kept in memory: path kinds and confidences padded
/// to D_max + 1, final-layer attention row padded to K.
struct TraceSummary {
    std::vector<int> path_kinds;  // NodeKind, -1 past the end of the path
    std::vector<double> confidences;
    std::vector<double> attention;

    bool operator==(const TraceSummary&) const = default;
};

struct FailureTrace {
    std::vector<Eigen::VectorXd> h;                 // h^(0..L) of the sample's node
    std::vector<std::vector<AttentionEntry>> rows;  // attention row per layer 1..L
    EvidencePath path;

    TraceSummary summary(int top_k, int max_depth) const;
};

struct AdversarialSample {
    std::string seed_id;
    int seed_node = -1;  // graph node of the seed, -1 when scored in isolation
    AdversarialKind kind = AdversarialKind::Grad;
    std::optional<std::string> mutated_text;
    std::optional<std::string> description;  // prompt description of the mutated email
    Eigen::VectorXd perturbed_features;
    Label ground_truth = Label::Spam;
    RewardParts reward_parts;
    double reward = 0.0;
    double score = 0.5;
    double epsilon_used = 0.0;
    double rho_used = 0.0;
    double lambda_used = 0.0;
    std::shared_ptr<const ForwardTrace> trace;

    NodeOverride as_override() const { return {seed_node, perturbed_features, description}; }
};

/// f of a sample: local pass with the sample's features at its seed node.
std::shared_ptr<ForwardTrace> score_sample(CogGnn& gnn, const ModelState& model, AdversarialSample& sample);

/// x_seed + s·ε·sign(∂ log f/∂x), s = -1 for Evade.
AdversarialSample gradient_perturb(CogGnn& gnn, const ModelState& model, const std::string& seed_id, int seed_node,
                                   const Eigen::VectorXd& x_seed, double epsilon,
                                   GradDirection direction = GradDirection::Evade);

enum class MutationOp : std::uint8_t { Leet = 0, ZeroWidth, Homoglyph, VocabSwap };

std::string mutate_token(std::string_view token, MutationOp op, const Vocabulary& vocab, Rng& rng);

/// Token-level obfuscation of subject and body, then re-featurization. URL
/// substrings are left intact. `forced` pins the mutation branch.
AdversarialSample semantic_mutate(const EmailDocument& seed, int seed_node, const FeatureSpace& space, double rho,
                                  std::uint64_t rng_seed, std::optional<MutationOp> forced = std::nullopt);

/// λ·grad + (1-λ)·semantic. Throws SeedMismatch.
AdversarialSample hybrid_combine(const AdversarialSample& grad, const AdversarialSample& semantic, double lambda);

class ExperienceMemory;

RewardParts reward_parts(const Eigen::VectorXd& phi_sample, const Eigen::VectorXd& phi_seed,
                         const ExperienceMemory& memory, double score, double novelty_cap);
double red_reward(const RewardParts& parts, const RewardWeights& weights);

/// Indices of samples with score < δ and spam ground truth.
std::vector<std::size_t> detect_failures(const std::vector<AdversarialSample>& samples, double delta);

/// Throws TraceUnavailable.
FailureTrace extract_failure_trace(const HeteroGraph& graph, const ForwardTrace* trace, int local_v,
                                   const PathOptions& options, const ForwardTrace* fallback = nullptr);

/// ||φ1 − φ2|| + α·||a1 − a2|| over zero-padded final-layer attention; a
/// missing summary makes the trace term 0.
double sample_distance(const Eigen::VectorXd& phi1, const TraceSummary* t1, const Eigen::VectorXd& phi2,
                       const TraceSummary* t2, double alpha_trace);

/// Exact enumeration when C(n,k)·n·k is small; otherwise farthest-first init
/// from a seeded first pick, then best-improvement swaps (at most
/// `max_swaps`). Returns medoid indices, ascending.
std::vector<int> kmedoids_compress(int n, int k, const std::function<double(int, int)>& dist, std::uint64_t rng_seed,
                                   int max_swaps = 100);
/// Σ_i min_m dist(i, m).
double kmedoids_objective(int n, const std::vector<int>& medoids, const std::function<double(int, int)>& dist);

struct MemoryEntry {
    std::uint64_t id = 0;
    Eigen::VectorXd phi;
    double cached_score = 0.0;
    TraceSummary trace;
    int inserted_at = 0;
    int last_used = 0;
    std::string anchor_id;  // seed document id
    std::optional<std::string> description;

    bool operator==(const MemoryEntry& o) const;
};

/// Bounded LRU store. Eviction removes the smallest (last_used, inserted_at, id).
class ExperienceMemory {
public:
    explicit ExperienceMemory(std::size_t capacity = 256) : capacity_(capacity) {}

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<MemoryEntry>& entries() const { return entries_; }

    /// Returns the new entry's id.
    std::uint64_t insert(MemoryEntry entry, int iteration);
    /// Marks an entry read at `iteration`. False if absent.
    bool touch(std::uint64_t id, int iteration);
    void touch_all(int iteration);
    bool contains(std::uint64_t id) const;

    /// Binary block starting with "EVOMAIL-MEMORY v1\n".
    std::string serialize() const;
    static ExperienceMemory deserialize(std::string_view bytes);

    bool operator==(const ExperienceMemory& o) const {
        return capacity_ == o.capacity_ && next_id_ == o.next_id_ && entries_ == o.entries_;
    }

private:
    void evict();

    std::size_t capacity_;
    std::uint64_t next_id_ = 0;
    std::vector<MemoryEntry> entries_;
};

struct LossWeights {
    double lambda = 0.5;
    double mu = 0.5;
    double nu = 1e-4;
};

struct LossReport {
    double task = 0.0;
    double cons = 0.0;
    double adv = 0.0;
    double reg = 0.0;
    double total = 0.0;
    LossWeights weights;
};

LossReport compose_losses(double task, double cons, double adv, double reg, const LossWeights& weights);

/// BCE with the score clamped to [1e-7, 1 - 1e-7]; y may be soft.
double bce(double y, double p);
/// dBCE/dp with the same clamp (0 outside it).
double bce_grad(double y, double p);

struct LossInputs {
    std::vector<std::pair<int, int>> labeled;  // (node, label)
    std::vector<std::pair<NodeOverride, double>> memory;  // (sample, cached score)
    std::vector<NodeOverride> adversarial;
    std::vector<int> benign;  // ham nodes
};

/// Losses as written (sums). When `grads` is given, accumulates scale·∇L_total.
/// Local passes read their base from `gnn`, which must hold an eval pass.
LossReport compute_losses(CogGnn& gnn, const ModelState& model, const LossInputs& inputs, const LossWeights& weights,
                          ModelState* grads = nullptr, double scale = 1.0, bool training = false,
                          std::uint64_t dropout_seed = 0);

struct EvolutionConfig {
    double epsilon = 0.05;
    GradDirection direction = GradDirection::Evade;
    double rho_mut = 0.15;
    double lambda_hybrid = 0.5;
    RewardWeights reward;
    double novelty_cap = 10.0;
    double delta_fail = 0.5;
    std::size_t memory_capacity = 256;
    double alpha_trace = 1.0;
    int adversarial_batch = 32;
    LossWeights loss;
    double eta = 0.002;
    int iterations = 10;
    std::uint64_t seed = 1;
    PathOptions path;
    /// Labeled nodes per parameter step; 0 means the whole training set.
    int batch_size = 400;

    /// Throws ConfigError.
    void validate() const;
};

/// Everything one training run operates on. Nodes index `graph`.
struct TrainingProblem {
    const HeteroGraph* graph = nullptr;
    const std::vector<EmailDocument>* docs = nullptr;
    const FeatureSpace* space = nullptr;
    std::vector<int> train_nodes;
    std::vector<int> holdout_nodes;
    /// Elementwise multiplier applied to adversarial features; empty = none.
    Eigen::VectorXd feature_mask;
};

struct IterationRecord {
    int iteration = 0;
    LossReport loss;
    double holdout_f1 = 0.0;
    std::size_t memory_size = 0;
    double mean_reward = 0.0;
    std::size_t failures = 0;
    double seconds = 0.0;  // wall time, not part of reports
};

struct TrainResult {
    ModelState model;
    ExperienceMemory memory;
    std::vector<IterationRecord> history;
};

/// Red team over `seeds` (spam nodes): grad, semantic and hybrid candidates
/// each, top `config.adversarial_batch` by reward.
std::vector<AdversarialSample> generate_adversarial_batch(CogGnn& gnn, const ModelState& model,
                                                          const TrainingProblem& problem, const std::vector<int>& seeds,
                                                          const ExperienceMemory& memory,
                                                          const EvolutionConfig& config, std::uint64_t rng_seed);

/// F1 at threshold 0.5 of `scores` (indexed by node) over `nodes`.
double f1_on(const Eigen::VectorXd& scores, const HeteroGraph& graph, const std::vector<EmailDocument>& docs,
             const std::vector<int>& nodes);

/// Called after every iteration with the fresh eval pass.
using IterationHook = std::function<void(int iteration, const CogGnn& gnn, const ModelState& model,
                                         const ForwardTrace& eval)>;

/// Red–blue loop. Starts from `model` and `memory`; deterministic under
/// config.seed. `encoder` must match model.hyper.d_p.
TrainResult train(const TrainingProblem& problem, SemanticEncoder& encoder, ModelState model, ExperienceMemory memory,
                  const EvolutionConfig& config, const IterationHook& hook = {});

/// CSV-like history: iteration, losses, F1, memory size, mean reward.
std::string format_history(const std::vector<IterationRecord>& history);

}  // namespace evomail
