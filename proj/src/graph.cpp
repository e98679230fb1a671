#include "evomail/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>

#include "evomail/error.hpp"
#include "evomail/util.hpp"

namespace evomail {

namespace {

constexpr std::array<std::string_view, kNodeKindCount> kKindNames = {"email",  "sender", "receiver",
                                                                     "domain", "url",    "attachment"};
constexpr std::array<std::string_view, kRelationCount> kRelationNames = {
    "sent_to", "hosted_on", "contains", "linked_to", "replied_to", "domain", "temporal", "semantic", "sender"};

std::string escape_field(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '\\') out += "\\\\";
        else if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else if (c == '\r') out += "\\r";
        else out.push_back(c);
    }
    return out;
}

std::string unescape_field(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            const char c = s[++i];
            out.push_back(c == 't' ? '\t' : c == 'n' ? '\n' : c == 'r' ? '\r' : c);
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(NodeKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }
std::string_view to_string(Relation relation) { return kRelationNames[static_cast<std::size_t>(relation)]; }

std::optional<NodeKind> parse_node_kind(std::string_view text) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (kKindNames[i] == text) return static_cast<NodeKind>(i);
    }
    return std::nullopt;
}

std::optional<Relation> parse_relation(std::string_view text) {
    for (std::size_t i = 0; i < kRelationNames.size(); ++i) {
        if (kRelationNames[i] == text) return static_cast<Relation>(i);
    }
    return std::nullopt;
}

double RelationScores::max() const { return std::max({domain, temporal, semantic, sender}); }

Relation RelationScores::argmax() const {
    Relation best = Relation::Domain;
    double value = domain;
    if (temporal > value) {
        best = Relation::Temporal;
        value = temporal;
    }
    if (semantic > value) {
        best = Relation::Semantic;
        value = semantic;
    }
    if (sender > value) best = Relation::Sender;
    return best;
}

std::string semantic_text(const EmailDocument& doc) {
    if (doc.subject.empty()) return doc.body;
    if (doc.body.empty()) return doc.subject;
    return doc.subject + "\n" + doc.body;
}

namespace {

RelationScores score_with(const EmailDocument& u, const EmailDocument& v, const RelationParams& p,
                          const Eigen::VectorXd& eu, const Eigen::VectorXd& ev) {
    RelationScores s;
    s.domain = (!u.sender_domain.empty() && u.sender_domain == v.sender_domain) ? p.w_domain : 0.0;
    if (u.timestamp && v.timestamp) {
        const double dt = std::abs(static_cast<double>(*u.timestamp - *v.timestamp));
        s.temporal = std::exp(-dt / p.sigma_t) * p.w_temporal;
    }
    s.semantic = cosine(eu, ev) * p.w_semantic;
    s.sender = (!u.sender_address.empty() && u.sender_address == v.sender_address) ? p.w_sender : 0.0;
    return s;
}

}  // namespace

RelationScores relation_scores(const EmailDocument& u, const EmailDocument& v, const RelationParams& params,
                               SemanticEncoder& encoder) {
    const auto eu = encoder.encode(semantic_text(u));
    const auto ev = encoder.encode(semantic_text(v));
    return score_with(u, v, params, *eu, *ev);
}

double relation_score(const EmailDocument& u, const EmailDocument& v, Relation kind, const RelationParams& params,
                      SemanticEncoder& encoder) {
    switch (kind) {
        case Relation::Domain: return relation_scores(u, v, params, encoder).domain;
        case Relation::Temporal: return relation_scores(u, v, params, encoder).temporal;
        case Relation::Semantic: return relation_scores(u, v, params, encoder).semantic;
        case Relation::Sender: return relation_scores(u, v, params, encoder).sender;
        default: return 0.0;
    }
}

std::vector<std::pair<int, int>> candidate_pairs(const std::vector<EmailDocument>& docs,
                                                 const CandidatePolicy& policy) {
    const std::size_t n = docs.size();
    std::vector<std::pair<int, int>> pairs;
    if (policy.kind == CandidatePolicy::Kind::AllPairs) {
        if (n > policy.all_pairs_cap) {
            throw CandidateExplosion("all_pairs requested for " + std::to_string(n) + " emails (cap " +
                                     std::to_string(policy.all_pairs_cap) + ")");
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
        }
        return pairs;
    }
    const auto check = [&]() {
        if (pairs.size() > policy.max_candidates) {
            throw CandidateExplosion("blocked policy produced more than " + std::to_string(policy.max_candidates) +
                                     " candidate pairs");
        }
    };
    std::map<std::string, std::vector<int>> blocks;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& d = docs[i];
        const int id = static_cast<int>(i);
        if (!d.sender_address.empty()) blocks["s:" + d.sender_address].push_back(id);
        if (!d.sender_domain.empty()) blocks["d:" + d.sender_domain].push_back(id);
        std::set<std::string> hosts;
        for (const auto& u : d.urls) {
            if (!u.host.empty()) hosts.insert(u.host);
        }
        for (const auto& h : hosts) blocks["h:" + h].push_back(id);
    }
    for (const auto& [key, members] : blocks) {
        for (std::size_t a = 0; a < members.size(); ++a) {
            for (std::size_t b = a + 1; b < members.size(); ++b) pairs.emplace_back(members[a], members[b]);
        }
        check();
    }
    std::vector<std::pair<std::int64_t, int>> timed;
    for (std::size_t i = 0; i < n; ++i) {
        if (docs[i].timestamp) timed.emplace_back(*docs[i].timestamp, static_cast<int>(i));
    }
    std::sort(timed.begin(), timed.end());
    for (std::size_t a = 0; a < timed.size(); ++a) {
        for (std::size_t b = a + 1; b < timed.size(); ++b) {
            if (static_cast<double>(timed[b].first - timed[a].first) > policy.temporal_window) break;
            pairs.emplace_back(std::min(timed[a].second, timed[b].second), std::max(timed[a].second, timed[b].second));
        }
        check();
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    return pairs;
}

std::vector<Edge> build_email_edges(const std::vector<EmailDocument>& docs, const RelationParams& params,
                                    SemanticEncoder& encoder, const CandidatePolicy& policy) {
    const auto pairs = candidate_pairs(docs, policy);
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const auto& d : docs) texts.push_back(semantic_text(d));
    const auto embeddings = encoder.encode_batch(texts);
    std::vector<Edge> edges;
    for (const auto& [i, j] : pairs) {
        const auto s = score_with(docs[static_cast<std::size_t>(i)], docs[static_cast<std::size_t>(j)], params,
                                  *embeddings[static_cast<std::size_t>(i)], *embeddings[static_cast<std::size_t>(j)]);
        if (s.max() > params.epsilon_r) edges.push_back({i, j, s.argmax(), s.sum()});
    }
    return edges;
}

std::string base_domain(std::string_view host) {
    if (host.empty()) return {};
    const bool numeric = std::all_of(host.begin(), host.end(), [](char c) { return (c >= '0' && c <= '9') || c == '.'; });
    if (numeric || host.front() == '[') return std::string(host);
    const std::size_t last = host.rfind('.');
    if (last == std::string_view::npos || last == 0) return std::string(host);
    const std::size_t prev = host.rfind('.', last - 1);
    return std::string(prev == std::string_view::npos ? host : host.substr(prev + 1));
}

std::string email_description(const EmailDocument& doc) {
    std::string body(utf8::prefix(doc.body, 200));
    std::replace(body.begin(), body.end(), '\n', ' ');
    std::string subject = doc.subject;
    std::replace(subject.begin(), subject.end(), '\n', ' ');
    return subject + " :: " + body;
}

void HeteroGraph::index() {
    const std::size_t n = nodes.size();
    offsets_.assign(n + 1, 0);
    for (const auto& e : edges) {
        ++offsets_[static_cast<std::size_t>(e.u) + 1];
        ++offsets_[static_cast<std::size_t>(e.v) + 1];
    }
    for (std::size_t i = 0; i < n; ++i) offsets_[i + 1] += offsets_[i];
    std::vector<std::pair<int, Relation>> slots(static_cast<std::size_t>(offsets_[n]));
    std::vector<int> fill(offsets_.begin(), offsets_.end() - 1);
    for (const auto& e : edges) {
        slots[static_cast<std::size_t>(fill[static_cast<std::size_t>(e.u)]++)] = {e.v, e.relation};
        slots[static_cast<std::size_t>(fill[static_cast<std::size_t>(e.v)]++)] = {e.u, e.relation};
    }
    neighbor_.resize(slots.size());
    slot_relation_.resize(slots.size());
    for (std::size_t v = 0; v < n; ++v) {
        auto begin = slots.begin() + offsets_[v];
        auto end = slots.begin() + offsets_[v + 1];
        std::sort(begin, end, [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto it = begin; it != end; ++it) {
            const auto s = static_cast<std::size_t>(it - slots.begin());
            neighbor_[s] = it->first;
            slot_relation_[s] = it->second;
        }
    }
    email_index_.clear();
    for (std::size_t i = 0; i < n; ++i) {
        if (nodes[i].kind == NodeKind::Email) email_index_.emplace(nodes[i].key, static_cast<int>(i));
    }
}

int HeteroGraph::find_slot(int v, int u) const {
    const auto begin = neighbor_.begin() + slot_begin(v);
    const auto end = neighbor_.begin() + slot_end(v);
    const auto it = std::lower_bound(begin, end, u);
    if (it == end || *it != u) return -1;
    return static_cast<int>(it - neighbor_.begin());
}

int HeteroGraph::co_occurrence(int u, int v) const {
    int count = 0;
    int a = slot_begin(u), b = slot_begin(v);
    const int ae = slot_end(u), be = slot_end(v);
    while (a < ae && b < be) {
        const int x = neighbor(a), y = neighbor(b);
        if (x < y) {
            ++a;
        } else if (y < x) {
            ++b;
        } else {
            if (nodes[static_cast<std::size_t>(x)].kind != NodeKind::Email) ++count;
            ++a;
            ++b;
        }
    }
    return count;
}

int HeteroGraph::shortest_path(int u, int v) const {
    if (u == v) return 0;
    std::unordered_map<int, int> dist{{u, 0}};
    std::deque<int> queue{u};
    while (!queue.empty()) {
        const int x = queue.front();
        queue.pop_front();
        const int dx = dist[x];
        if (dx >= max_hops) continue;
        for (int s = slot_begin(x); s < slot_end(x); ++s) {
            const int y = neighbor(s);
            if (dist.contains(y)) continue;
            if (y == v) return dx + 1;
            dist[y] = dx + 1;
            queue.push_back(y);
        }
    }
    return max_hops + 1;
}

void HeteroGraph::compute_structural_stats(double damping, int hops) {
    if (nodes.empty()) throw EmptyInput("structural statistics of an empty graph");
    if (offsets_.size() != nodes.size() + 1) index();
    max_hops = hops;
    const auto n = static_cast<Eigen::Index>(nodes.size());
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::VectorXd pr = Eigen::VectorXd::Constant(n, inv_n);
    for (int iter = 0; iter < 200; ++iter) {
        double dangling = 0.0;
        Eigen::VectorXd next = Eigen::VectorXd::Zero(n);
        for (Eigen::Index v = 0; v < n; ++v) {
            const int deg = degree(static_cast<int>(v));
            if (deg == 0) {
                dangling += pr[v];
                continue;
            }
            const double share = pr[v] / deg;
            for (int s = slot_begin(static_cast<int>(v)); s < slot_end(static_cast<int>(v)); ++s) {
                next[neighbor(s)] += share;
            }
        }
        next = (next.array() + dangling * inv_n) * damping + (1.0 - damping) * inv_n;
        const double change = (next - pr).lpNorm<1>();
        pr = next;
        if (change < 1e-10) break;
    }
    pagerank = pr / pr.sum();

    entity_count.assign(nodes.size(), 0);
    max_degree = 0;
    for (std::size_t v = 0; v < nodes.size(); ++v) {
        max_degree = std::max(max_degree, degree(static_cast<int>(v)));
        for (int s = slot_begin(static_cast<int>(v)); s < slot_end(static_cast<int>(v)); ++s) {
            if (nodes[static_cast<std::size_t>(neighbor(s))].kind != NodeKind::Email) ++entity_count[v];
        }
    }
    slot_struct.assign(neighbor_.size(), 0.0);
    slot_freq.assign(neighbor_.size(), 0.0);
    for (std::size_t v = 0; v < nodes.size(); ++v) {
        for (int s = slot_begin(static_cast<int>(v)); s < slot_end(static_cast<int>(v)); ++s) {
            const int u = neighbor(s);
            // Neighbours are adjacent, so their shortest path is one hop.
            slot_struct[static_cast<std::size_t>(s)] =
                pagerank[u] + static_cast<double>(degree(u)) / static_cast<double>(max_degree) + 0.5;
            const int tu = entity_count[static_cast<std::size_t>(u)];
            const int tv = entity_count[v];
            if (tu > 0 && tv > 0) {
                slot_freq[static_cast<std::size_t>(s)] =
                    co_occurrence(u, static_cast<int>(v)) / std::sqrt(static_cast<double>(tu) * tv);
            }
        }
    }
}

std::optional<int> HeteroGraph::email_node(std::string_view doc_id) const {
    const auto it = email_index_.find(std::string(doc_id));
    if (it == email_index_.end()) return std::nullopt;
    return it->second;
}

NodeDescriptor HeteroGraph::descriptor(int v) const {
    const auto& node = nodes[static_cast<std::size_t>(v)];
    NodeDescriptor d{std::string(to_string(node.kind)), {}};
    d.desc = static_cast<std::size_t>(v) < descriptions.size() ? descriptions[static_cast<std::size_t>(v)] : node.key;
    return d;
}

std::string HeteroGraph::serialize() const {
    std::string out = "EVOMAIL-GRAPH v1\n";
    out += "nodes " + std::to_string(nodes.size()) + "\n";
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        out += std::to_string(i) + "\t" + std::string(to_string(nodes[i].kind)) + "\t" + escape_field(nodes[i].key) +
               "\n";
    }
    out += "edges " + std::to_string(edges.size()) + "\n";
    for (const auto& e : edges) {
        out += std::to_string(e.u) + "\t" + std::to_string(e.v) + "\t" + std::string(to_string(e.relation)) + "\t" +
               format_double(e.weight) + "\n";
    }
    return out;
}

HeteroGraph HeteroGraph::deserialize(std::string_view text) {
    BinaryReader in(text);
    const std::string header = text.empty() ? std::string() : in.line();
    if (header != "EVOMAIL-GRAPH v1") {
        if (header.starts_with("EVOMAIL-GRAPH")) throw VersionMismatch("graph file: " + header);
        throw CorruptFile("missing EVOMAIL-GRAPH header", 0);
    }
    const auto read_count = [&](std::string_view key) -> std::size_t {
        const std::size_t at = in.offset();
        const std::string line = in.line();
        if (!line.starts_with(std::string(key) + " ")) throw CorruptFile("expected " + std::string(key), at);
        try {
            const double v = parse_double(std::string_view(line).substr(key.size() + 1));
            if (v < 0 || v != std::floor(v) || v > 1e9) throw std::invalid_argument("count");
            return static_cast<std::size_t>(v);
        } catch (const std::invalid_argument&) {
            throw CorruptFile("bad count", at);
        }
    };
    const auto to_int = [&](std::string_view s, std::size_t at, std::size_t limit) {
        try {
            const double v = parse_double(s);
            if (v < 0 || v != std::floor(v) || v >= static_cast<double>(limit)) throw std::invalid_argument("id");
            return static_cast<int>(v);
        } catch (const std::invalid_argument&) {
            throw CorruptFile("bad node id", at);
        }
    };
    HeteroGraph g;
    const std::size_t n = read_count("nodes");
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = in.offset();
        const std::string line = in.line();
        const auto fields = split(line, '\t');
        if (fields.size() != 3 || to_int(fields[0], at, n) != static_cast<int>(i)) {
            throw CorruptFile("bad node record", at);
        }
        const auto kind = parse_node_kind(fields[1]);
        if (!kind) throw CorruptFile("unknown node kind", at);
        g.nodes.push_back({*kind, unescape_field(fields[2])});
        if (*kind == NodeKind::Email) ++g.n_emails;
    }
    const std::size_t m = read_count("edges");
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t at = in.offset();
        const std::string line = in.line();
        const auto fields = split(line, '\t');
        if (fields.size() != 4) throw CorruptFile("bad edge record", at);
        Edge e;
        e.u = to_int(fields[0], at, n);
        e.v = to_int(fields[1], at, n);
        const auto rel = parse_relation(fields[2]);
        if (!rel || e.u >= e.v) throw CorruptFile("bad edge record", at);
        e.relation = *rel;
        try {
            e.weight = parse_double(fields[3]);
        } catch (const std::invalid_argument&) {
            throw CorruptFile("bad edge weight", at);
        }
        if (!(e.weight > 0.0) || !std::isfinite(e.weight)) throw CorruptFile("edge weight must be positive", at);
        g.edges.push_back(e);
    }
    g.index();
    return g;
}

HeteroGraph expand_entity_graph(const std::vector<EmailDocument>& docs, const std::vector<Edge>& email_edges,
                                const EntityMask& mask) {
    HeteroGraph g;
    g.n_emails = static_cast<int>(docs.size());
    for (const auto& d : docs) {
        g.nodes.push_back({NodeKind::Email, d.id});
        g.descriptions.push_back(email_description(d));
    }
    std::map<std::pair<NodeKind, std::string>, int> entity;
    const auto node_of = [&](NodeKind kind, const std::string& key) {
        const auto [it, inserted] = entity.try_emplace({kind, key}, static_cast<int>(g.nodes.size()));
        if (inserted) {
            g.nodes.push_back({kind, key});
            g.descriptions.push_back(key);
        }
        return it->second;
    };
    std::map<std::pair<int, int>, std::size_t> edge_at;
    const auto add_edge = [&](int a, int b, Relation r, double w, bool overwrite) {
        if (a == b) return;
        const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
        const auto it = edge_at.find(key);
        if (it != edge_at.end()) {
            if (overwrite) g.edges[it->second].relation = r;
            return;
        }
        edge_at.emplace(key, g.edges.size());
        g.edges.push_back({key.first, key.second, r, w});
    };
    for (const auto& e : email_edges) add_edge(e.u, e.v, e.relation, e.weight, false);

    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& d = docs[i];
        const int email = static_cast<int>(i);
        if (mask.senders && !d.sender_address.empty()) {
            const int s = node_of(NodeKind::Sender, d.sender_address);
            add_edge(email, s, Relation::SentTo, 1.0, false);
            if (mask.domains && !d.sender_domain.empty()) {
                add_edge(s, node_of(NodeKind::Domain, base_domain(d.sender_domain)), Relation::HostedOn, 1.0, false);
            }
        }
        if (mask.receivers) {
            for (const auto& r : d.recipient_addresses) {
                const int rn = node_of(NodeKind::Receiver, r);
                add_edge(email, rn, Relation::SentTo, 1.0, false);
                const std::string dom = domain_of(r);
                if (mask.domains && !dom.empty()) {
                    add_edge(rn, node_of(NodeKind::Domain, base_domain(dom)), Relation::HostedOn, 1.0, false);
                }
            }
        }
        if (mask.urls) {
            for (const auto& u : d.urls) {
                if (u.host.empty()) continue;
                const int un = node_of(NodeKind::Url, u.host);
                add_edge(email, un, Relation::LinkedTo, 1.0, false);
                if (mask.domains) {
                    add_edge(un, node_of(NodeKind::Domain, base_domain(u.host)), Relation::HostedOn, 1.0, false);
                }
            }
        }
        if (mask.attachments) {
            for (const auto& a : d.attachments) {
                add_edge(email, node_of(NodeKind::Attachment, a.digest), Relation::Contains, 1.0, false);
            }
        }
    }
    if (mask.replies) {
        std::unordered_map<std::string, int> by_message_id;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            if (!docs[i].message_id.empty()) by_message_id.try_emplace(docs[i].message_id, static_cast<int>(i));
        }
        for (std::size_t i = 0; i < docs.size(); ++i) {
            if (docs[i].in_reply_to.empty()) continue;
            const auto it = by_message_id.find(docs[i].in_reply_to);
            if (it != by_message_id.end()) add_edge(static_cast<int>(i), it->second, Relation::RepliedTo, 1.0, true);
        }
    }
    std::sort(g.edges.begin(), g.edges.end(),
              [](const Edge& a, const Edge& b) { return std::tie(a.u, a.v) < std::tie(b.u, b.v); });
    g.index();
    return g;
}

void attach_features(HeteroGraph& graph, const std::vector<Eigen::VectorXd>& email_features, int dim) {
    if (dim < 7) throw DimensionMismatch("feature dimension must be at least 7 for entity features");
    if (email_features.size() != static_cast<std::size_t>(graph.n_emails)) {
        throw DimensionMismatch("one feature vector per email required");
    }
    std::vector<Eigen::Triplet<double>> triplets;
    for (std::size_t i = 0; i < email_features.size(); ++i) {
        if (email_features[i].size() != dim) throw DimensionMismatch("email feature vector has wrong dimension");
        for (Eigen::Index r = 0; r < dim; ++r) {
            if (email_features[i][r] != 0.0) {
                triplets.emplace_back(static_cast<int>(r), static_cast<int>(i), email_features[i][r]);
            }
        }
    }
    for (std::size_t v = static_cast<std::size_t>(graph.n_emails); v < graph.nodes.size(); ++v) {
        const int col = static_cast<int>(v);
        triplets.emplace_back(static_cast<int>(graph.nodes[v].kind), col, 1.0);
        const double deg = std::log1p(static_cast<double>(graph.degree(col)));
        if (deg != 0.0) triplets.emplace_back(6, col, deg);
    }
    graph.features.resize(dim, static_cast<Eigen::Index>(graph.nodes.size()));
    graph.features.setFromTriplets(triplets.begin(), triplets.end());
    graph.features.makeCompressed();
}

HeteroGraph build_graph(const std::vector<EmailDocument>& docs, const std::vector<Eigen::VectorXd>& email_features,
                        int feature_dim, SemanticEncoder& encoder, const GraphOptions& options) {
    std::vector<Edge> email_edges;
    if (docs.size() >= 2) email_edges = build_email_edges(docs, options.relation, encoder, options.policy);
    HeteroGraph g = expand_entity_graph(docs, email_edges, options.mask);
    attach_features(g, email_features, feature_dim);
    g.compute_structural_stats(options.pagerank_damping, options.max_hops);
    return g;
}

}  // namespace evomail
