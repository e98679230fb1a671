#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evomail/email.hpp"
#include "evomail/encoder.hpp"

namespace evomail {

class FeatureSpace;

enum class NodeKind : std::uint8_t { Email = 0, Sender, Receiver, Domain, Url, Attachment };
inline constexpr int kNodeKindCount = 6;

enum class Relation : std::uint8_t {
    SentTo = 0,
    HostedOn,
    Contains,
    LinkedTo,
    RepliedTo,
    Domain,
    Temporal,
    Semantic,
    Sender,
};
inline constexpr int kRelationCount = 9;

std::string_view to_string(NodeKind kind);
std::string_view to_string(Relation relation);
std::optional<NodeKind> parse_node_kind(std::string_view text);
std::optional<Relation> parse_relation(std::string_view text);

struct RelationParams {
    double w_domain = 1.0;
    double w_temporal = 1.0;
    double w_semantic = 1.0;
    double w_sender = 1.0;
    double sigma_t = 86400.0;
    double epsilon_r = 0.5;
};

struct CandidatePolicy {
    enum class Kind { AllPairs, Blocked };
    Kind kind = Kind::Blocked;
    /// Largest corpus all_pairs accepts.
    std::size_t all_pairs_cap = 2000;
    /// Blocked policy: pairs whose timestamps are at most this far apart.
    double temporal_window = 86400.0;
    /// Hard ceiling on scored pairs under either policy.
    std::size_t max_candidates = 5'000'000;
};

struct RelationScores {
    double domain = 0.0;
    double temporal = 0.0;
    double semantic = 0.0;
    double sender = 0.0;

    double max() const;
    double sum() const { return domain + temporal + semantic + sender; }
    /// Largest-scoring kind, first of (domain, temporal, semantic, sender) on ties.
    Relation argmax() const;
};

/// Text used for the semantic relation of an email.
std::string semantic_text(const EmailDocument& doc);

RelationScores relation_scores(const EmailDocument& u, const EmailDocument& v, const RelationParams& params,
                               SemanticEncoder& encoder);
/// One of the four scored kinds; other kinds score 0.
double relation_score(const EmailDocument& u, const EmailDocument& v, Relation kind, const RelationParams& params,
                      SemanticEncoder& encoder);

struct Edge {
    int u = 0;
    int v = 0;
    Relation relation = Relation::SentTo;
    double weight = 1.0;

    bool operator==(const Edge&) const = default;
};

/// Candidate pairs (i < j) under the policy. Throws CandidateExplosion.
std::vector<std::pair<int, int>> candidate_pairs(const std::vector<EmailDocument>& docs,
                                                 const CandidatePolicy& policy);

/// Email-email edges; node ids are document positions.
std::vector<Edge> build_email_edges(const std::vector<EmailDocument>& docs, const RelationParams& params,
                                    SemanticEncoder& encoder, const CandidatePolicy& policy);

struct Node {
    NodeKind kind = NodeKind::Email;
    std::string key;

    bool operator==(const Node&) const = default;
};

/// Registrable-looking domain: the last two labels of a host.
std::string base_domain(std::string_view host);

/// Which entity classes expand_entity_graph adds.
struct EntityMask {
    bool senders = true;
    bool receivers = true;
    bool domains = true;
    bool urls = true;
    bool attachments = true;
    bool replies = true;
};

/// Typed graph with CSR adjacency and the structural statistics used for
/// neighbour selection and attention. Emails occupy ids 0..n_emails-1 in
/// document order; entity nodes follow in first-appearance order.
class HeteroGraph {
public:
    std::vector<Node> nodes;
    std::vector<Edge> edges;  // u < v, sorted
    std::vector<std::string> descriptions;
    /// d × N; email columns are document features, entity columns carry the
    /// kind one-hot in rows 0..5 and log1p(degree) in row 6.
    Eigen::SparseMatrix<double> features;
    int n_emails = 0;

    std::size_t size() const { return nodes.size(); }
    int feature_dim() const { return static_cast<int>(features.rows()); }

    /// Rebuilds CSR adjacency from `edges`.
    void index();
    const std::vector<int>& offsets() const { return offsets_; }
    int slot_begin(int v) const { return offsets_[static_cast<std::size_t>(v)]; }
    int slot_end(int v) const { return offsets_[static_cast<std::size_t>(v) + 1]; }
    int neighbor(int slot) const { return neighbor_[static_cast<std::size_t>(slot)]; }
    Relation slot_relation(int slot) const { return slot_relation_[static_cast<std::size_t>(slot)]; }
    int degree(int v) const { return slot_end(v) - slot_begin(v); }
    /// Slot of neighbour u in v's list, or -1.
    int find_slot(int v, int u) const;

    /// Fills pagerank, entity counts and per-slot salience terms.
    void compute_structural_stats(double damping = 0.85, int max_hops = 4);
    bool has_stats() const { return !nodes.empty() && pagerank.size() == static_cast<Eigen::Index>(nodes.size()); }
    Eigen::VectorXd pagerank;
    std::vector<int> entity_count;
    int max_degree = 0;
    int max_hops = 4;
    /// Per directed slot (centre v, neighbour u): PageRank(u) + deg(u)/max_deg + 1/(1+spath).
    std::vector<double> slot_struct;
    /// Per directed slot: co_occurrence / sqrt(total(u) total(v)).
    std::vector<double> slot_freq;

    int co_occurrence(int u, int v) const;
    /// Unweighted BFS distance, max_hops + 1 when farther.
    int shortest_path(int u, int v) const;

    std::optional<int> email_node(std::string_view doc_id) const;
    NodeDescriptor descriptor(int v) const;

    /// Text block "EVOMAIL-GRAPH v1": nodes (id, kind, key) then edges.
    std::string serialize() const;
    /// Restores nodes and edges; features, descriptions and stats are not part
    /// of the file.
    static HeteroGraph deserialize(std::string_view text);

private:
    std::vector<int> offsets_;
    std::vector<int> neighbor_;
    std::vector<Relation> slot_relation_;
    std::unordered_map<std::string, int> email_index_;
};

/// Email description used in prompts: subject, then the first 200 body code points.
std::string email_description(const EmailDocument& doc);

/// Adds entity nodes and schema edges around the email-email edges.
HeteroGraph expand_entity_graph(const std::vector<EmailDocument>& docs, const std::vector<Edge>& email_edges,
                                const EntityMask& mask = {});

/// Writes the feature matrix: given email feature columns plus entity features.
void attach_features(HeteroGraph& graph, const std::vector<Eigen::VectorXd>& email_features, int dim);

struct GraphOptions {
    RelationParams relation;
    CandidatePolicy policy;
    EntityMask mask;
    double pagerank_damping = 0.85;
    int max_hops = 4;
};

/// Full pipeline: email edges, entity expansion, features, statistics.
HeteroGraph build_graph(const std::vector<EmailDocument>& docs, const std::vector<Eigen::VectorXd>& email_features,
                        int feature_dim, SemanticEncoder& encoder, const GraphOptions& options);

}  // namespace evomail
