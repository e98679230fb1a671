#include <doctest.h>

#include <cmath>
#include <set>

#include "evomail/encoder.hpp"
#include "evomail/error.hpp"
#include "evomail/graph.hpp"
#include "evomail/util.hpp"

using namespace evomail;

namespace {

EmailDocument mail(std::string id, std::string from, std::int64_t t, std::string subject = "s",
                   std::string body = "b") {
    EmailDocument d;
    d.id = std::move(id);
    d.sender_address = std::move(from);
    d.sender_domain = domain_of(d.sender_address);
    d.timestamp = t;
    d.subject = std::move(subject);
    d.body = std::move(body);
    return d;
}

std::vector<Eigen::VectorXd> zero_features(std::size_t n, int dim) {
    return std::vector<Eigen::VectorXd>(n, Eigen::VectorXd::Zero(dim));
}

HeteroGraph edge_graph(int n, const std::vector<std::pair<int, int>>& pairs) {
    HeteroGraph g;
    for (int i = 0; i < n; ++i) g.nodes.push_back({NodeKind::Email, "e" + std::to_string(i)});
    g.n_emails = n;
    for (auto [u, v] : pairs) g.edges.push_back({std::min(u, v), std::max(u, v), Relation::Semantic, 1.0});
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) { return std::tie(a.u, a.v) < std::tie(b.u, b.v); });
    g.index();
    return g;
}

// Dense power iteration on the same random-walk definition.
Eigen::VectorXd dense_pagerank(const HeteroGraph& g, double damping) {
    const auto n = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index v = 0; v < n; ++v) {
        const int deg = g.degree(static_cast<int>(v));
        for (Eigen::Index u = 0; u < n; ++u) {
            if (deg == 0) m(u, v) = 1.0 / static_cast<double>(n);
            else if (g.find_slot(static_cast<int>(v), static_cast<int>(u)) >= 0) m(u, v) = 1.0 / deg;
        }
    }
    const Eigen::MatrixXd google = damping * m + Eigen::MatrixXd::Constant(n, n, (1 - damping) / static_cast<double>(n));
    Eigen::VectorXd p = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    for (int i = 0; i < 2000; ++i) p = google * p;
    return p / p.sum();
}

bool legal_ordered(NodeKind a, NodeKind b, Relation r) {
    switch (r) {
        case Relation::SentTo: return a == NodeKind::Email && (b == NodeKind::Sender || b == NodeKind::Receiver);
        case Relation::LinkedTo: return a == NodeKind::Email && b == NodeKind::Url;
        case Relation::Contains: return a == NodeKind::Email && b == NodeKind::Attachment;
        case Relation::HostedOn:
            return b == NodeKind::Domain && (a == NodeKind::Url || a == NodeKind::Sender || a == NodeKind::Receiver);
        default: return a == NodeKind::Email && b == NodeKind::Email;
    }
}

bool legal(NodeKind a, NodeKind b, Relation r) { return legal_ordered(a, b, r) || legal_ordered(b, a, r); }

}  // namespace

TEST_CASE("relation scores") {
    HashedEncoder enc(256);
    RelationParams p;
    const auto u = mail("u", "a@x.com", 1000, "hello there friend", "same body text here");
    auto v = mail("v", "b@x.com", 1000 + 86400, "hello there friend", "same body text here");
    CHECK(relation_score(u, v, Relation::Domain, p, enc) == 1.0);
    CHECK(relation_score(u, v, Relation::Temporal, p, enc) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(relation_score(u, v, Relation::Semantic, p, enc) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(relation_score(u, v, Relation::Sender, p, enc) == 0.0);
    CHECK(relation_score(u, v, Relation::SentTo, p, enc) == 0.0);
    v.timestamp.reset();
    CHECK(relation_score(u, v, Relation::Temporal, p, enc) == 0.0);
    p.w_domain = 2.5;
    CHECK(relation_score(u, u, Relation::Domain, p, enc) == 2.5);
    CHECK(relation_score(u, u, Relation::Sender, p, enc) == 1.0);
}

TEST_CASE("edge rule: max over threshold, weight is the sum") {
    RelationScores s{1.0, 0.2, 0.1, 0.0};
    CHECK(s.max() == 1.0);
    CHECK(s.sum() == doctest::Approx(1.3).epsilon(1e-15));
    CHECK(s.argmax() == Relation::Domain);

    HashedEncoder enc(256);
    RelationParams p;
    p.w_semantic = 0.1;
    p.sigma_t = 86400.0 / -std::log(0.2);
    const std::vector<EmailDocument> docs = {mail("a", "a@x.com", 0, "q r s", "t u v"),
                                             mail("b", "b@x.com", 86400, "w x y", "z z z")};
    const auto edges = build_email_edges(docs, p, enc, {CandidatePolicy::Kind::AllPairs});
    REQUIRE(edges.size() == 1);
    const auto scores = relation_scores(docs[0], docs[1], p, enc);
    CHECK(scores.temporal == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(edges[0].weight == doctest::Approx(scores.sum()).epsilon(1e-12));
    CHECK(edges[0].relation == Relation::Domain);

    // nothing fires: no edge
    const std::vector<EmailDocument> apart = {mail("a", "a@x.com", 0, "q r s", "t u v"),
                                              mail("b", "b@y.com", 10'000'000, "w x y", "z z z")};
    p.w_semantic = 0.0001;
    CHECK(build_email_edges(apart, p, enc, {CandidatePolicy::Kind::AllPairs}).empty());
}

TEST_CASE("threshold soundness and weight additivity on a random corpus") {
    HashedEncoder enc(128);
    Rng rng(3);
    std::vector<EmailDocument> docs;
    const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "eps", "zeta"};
    for (int i = 0; i < 40; ++i) {
        std::string body;
        for (int w = 0; w < 5; ++w) body += words[rng.index(words.size())] + " ";
        docs.push_back(mail("m" + std::to_string(i), "u" + std::to_string(rng.index(5)) + "@d" +
                                                         std::to_string(rng.index(3)) + ".com",
                            static_cast<std::int64_t>(rng.index(400000)), "subj", body));
    }
    RelationParams p;
    const auto edges = build_email_edges(docs, p, enc, {CandidatePolicy::Kind::AllPairs});
    std::set<std::pair<int, int>> present;
    for (const auto& e : edges) {
        const auto s = relation_scores(docs[static_cast<std::size_t>(e.u)], docs[static_cast<std::size_t>(e.v)], p, enc);
        CHECK(s.max() > p.epsilon_r);
        CHECK(std::abs(e.weight - s.sum()) <= 1e-12);
        CHECK(e.weight > 0.0);
        CHECK(e.u < e.v);
        present.insert({e.u, e.v});
    }
    for (int i = 0; i < 40; ++i) {
        for (int j = i + 1; j < 40; ++j) {
            if (present.contains({i, j})) continue;
            CHECK(relation_scores(docs[static_cast<std::size_t>(i)], docs[static_cast<std::size_t>(j)], p, enc).max() <=
                  p.epsilon_r);
        }
    }
}

TEST_CASE("candidate policies") {
    const std::vector<EmailDocument> far = {mail("a", "a@x.com", 0), mail("b", "b@y.com", 10'000'000)};
    CandidatePolicy blocked;
    CHECK(candidate_pairs(far, blocked).empty());
    CandidatePolicy all{CandidatePolicy::Kind::AllPairs};
    CHECK(candidate_pairs(far, all).size() == 1);
    all.all_pairs_cap = 1;
    CHECK_THROWS_AS(candidate_pairs(far, all), CandidateExplosion);

    std::vector<EmailDocument> same;
    for (int i = 0; i < 10; ++i) same.push_back(mail(std::to_string(i), "a@x.com", i * 10'000'000LL));
    CHECK(candidate_pairs(same, blocked).size() == 45);
    blocked.max_candidates = 10;
    CHECK_THROWS_AS(candidate_pairs(same, blocked), CandidateExplosion);

    auto h1 = mail("h1", "a@p.com", 0);
    auto h2 = mail("h2", "b@q.com", 10'000'000);
    h1.urls = {make_url_record("http://shared.net/1")};
    h2.urls = {make_url_record("http://shared.net/2")};
    CHECK(candidate_pairs({h1, h2}, CandidatePolicy{}).size() == 1);
    const auto near = candidate_pairs({mail("a", "a@p.com", 0), mail("b", "b@q.com", 100)}, CandidatePolicy{});
    CHECK(near.size() == 1);
}

TEST_CASE("entity expansion") {
    auto d = mail("e0", "s@x.com", 0);
    d.recipient_addresses.clear();
    d.urls = {make_url_record("http://h.org/path")};
    const auto g = expand_entity_graph({d}, {});
    REQUIRE(g.size() == 5);
    std::multiset<std::pair<NodeKind, std::string>> nodes;
    for (const auto& n : g.nodes) nodes.insert({n.kind, n.key});
    CHECK(nodes.count({NodeKind::Email, "e0"}) == 1);
    CHECK(nodes.count({NodeKind::Sender, "s@x.com"}) == 1);
    CHECK(nodes.count({NodeKind::Domain, "x.com"}) == 1);
    CHECK(nodes.count({NodeKind::Url, "h.org"}) == 1);
    CHECK(nodes.count({NodeKind::Domain, "h.org"}) == 1);
    CHECK(g.edges.size() >= 4);

    auto a = mail("a", "p@x.com", 0);
    a.message_id = "m1@x";
    a.attachments = {{"f.pdf", "application/pdf", "dig", 3}};
    auto b = mail("b", "q@y.com", 5);
    b.in_reply_to = "m1@x";
    b.attachments = {{"g.pdf", "application/pdf", "dig", 3}};
    const auto g2 = expand_entity_graph({a, b}, {});
    bool replied = false;
    for (const auto& e : g2.edges) replied |= e.u == 0 && e.v == 1 && e.relation == Relation::RepliedTo;
    CHECK(replied);
    int attachment_nodes = 0;
    for (std::size_t v = 0; v < g2.size(); ++v) {
        if (g2.nodes[v].kind != NodeKind::Attachment) continue;
        ++attachment_nodes;
        CHECK(g2.find_slot(static_cast<int>(v), 0) >= 0);
        CHECK(g2.find_slot(static_cast<int>(v), 1) >= 0);
    }
    CHECK(attachment_nodes == 1);

    EntityMask none{false, false, false, false, false, false};
    CHECK(expand_entity_graph({a, b}, {}, none).size() == 2);
}

TEST_CASE("schema closure and invariants on a built graph") {
    HashedEncoder enc(64);
    std::vector<EmailDocument> docs;
    for (int i = 0; i < 12; ++i) {
        auto d = mail("m" + std::to_string(i), "u" + std::to_string(i % 3) + "@d" + std::to_string(i % 2) + ".com",
                      i * 3600, "subject " + std::to_string(i % 4), "body words " + std::to_string(i % 2));
        d.recipient_addresses = {"r" + std::to_string(i % 2) + "@corp.com"};
        d.urls = {make_url_record("http://site" + std::to_string(i % 3) + ".net/x")};
        if (i % 4 == 0) d.attachments = {{"a.bin", "application/octet-stream", "d" + std::to_string(i % 8), 9}};
        d.message_id = "id" + std::to_string(i);
        if (i > 0) d.in_reply_to = "id" + std::to_string(i - 1);
        docs.push_back(d);
    }
    const auto g = build_graph(docs, zero_features(docs.size(), 8), 8, enc, GraphOptions{});
    std::set<std::pair<int, int>> seen;
    for (const auto& e : g.edges) {
        CHECK(e.u < e.v);
        CHECK(e.weight > 0.0);
        CHECK(std::isfinite(e.weight));
        CHECK(seen.insert({e.u, e.v}).second);
        INFO(to_string(g.nodes[static_cast<std::size_t>(e.u)].kind), " ", to_string(g.nodes[static_cast<std::size_t>(e.v)].kind), " ", to_string(e.relation));
        CHECK(legal(g.nodes[static_cast<std::size_t>(e.u)].kind, g.nodes[static_cast<std::size_t>(e.v)].kind, e.relation));
    }
    CHECK(g.pagerank.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((g.pagerank.array() >= 0.0).all());
    CHECK(g.pagerank.isApprox(dense_pagerank(g, 0.85), 1e-8));
    CHECK(g.features.rows() == 8);
    CHECK(g.features.cols() == static_cast<Eigen::Index>(g.size()));
    const auto g2 = build_graph(docs, zero_features(docs.size(), 8), 8, enc, GraphOptions{});
    CHECK(g2.edges == g.edges);
    CHECK(g2.nodes == g.nodes);
}

TEST_CASE("structural statistics") {
    auto two = edge_graph(2, {{0, 1}});
    two.compute_structural_stats();
    CHECK(two.pagerank[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(two.pagerank[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(two.slot_struct[0] == doctest::Approx(2.0).epsilon(1e-12));

    auto path = edge_graph(3, {{0, 1}, {1, 2}});
    path.compute_structural_stats(0.85, 4);
    CHECK(path.shortest_path(0, 2) == 2);
    CHECK(path.shortest_path(2, 0) == 2);
    CHECK(path.shortest_path(1, 1) == 0);
    path.compute_structural_stats(0.85, 1);
    CHECK(path.shortest_path(0, 2) == 2);  // beyond max_hops → max_hops + 1

    HeteroGraph shared;
    shared.nodes = {{NodeKind::Email, "u"}, {NodeKind::Email, "v"}, {NodeKind::Domain, "d"}};
    shared.n_emails = 2;
    shared.edges = {{0, 1, Relation::Domain, 1.0}, {0, 2, Relation::HostedOn, 1.0}, {1, 2, Relation::HostedOn, 1.0}};
    shared.index();
    shared.compute_structural_stats();
    CHECK(shared.co_occurrence(0, 1) == 1);
    CHECK(shared.entity_count[0] == 1);
    CHECK(shared.slot_freq[static_cast<std::size_t>(shared.find_slot(1, 0))] == doctest::Approx(1.0));

    auto isolated = edge_graph(3, {{0, 1}});
    isolated.compute_structural_stats();
    CHECK(isolated.pagerank.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(isolated.degree(2) == 0);
    CHECK(isolated.shortest_path(0, 2) == isolated.max_hops + 1);
}

TEST_CASE("bfs against floyd-warshall on random graphs") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 5 + static_cast<int>(rng.index(20));
        std::vector<std::pair<int, int>> pairs;
        std::set<std::pair<int, int>> used;
        for (int k = 0; k < n; ++k) {
            int u = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
            int v = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
            if (u == v || !used.insert({std::min(u, v), std::max(u, v)}).second) continue;
            pairs.emplace_back(u, v);
        }
        auto g = edge_graph(n, pairs);
        g.compute_structural_stats(0.85, 3);
        const int inf = 1 << 20;
        std::vector<std::vector<int>> d(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), inf));
        for (int i = 0; i < n; ++i) d[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 0;
        for (auto [u, v] : pairs) d[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] = d[static_cast<std::size_t>(v)][static_cast<std::size_t>(u)] = 1;
        for (int k = 0; k < n; ++k)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    auto& dij = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                    dij = std::min(dij, d[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] + d[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]);
                }
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const int expect = std::min(d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 4);
                CHECK(g.shortest_path(i, j) == expect);
            }
        }
        CHECK(g.pagerank.isApprox(dense_pagerank(g, 0.85), 1e-8));
    }
}

TEST_CASE("graph file round-trip") {
    HashedEncoder enc(32);
    auto a = mail("a\tb", "p@x.com", 0);
    a.urls = {make_url_record("http://h.org/1")};
    const auto g = build_graph({a, mail("c", "p@x.com", 10)}, zero_features(2, 7), 7, enc, GraphOptions{});
    const auto text = g.serialize();
    const auto back = HeteroGraph::deserialize(text);
    CHECK(back.nodes == g.nodes);
    CHECK(back.edges == g.edges);
    CHECK(back.n_emails == 2);
    CHECK(back.serialize() == text);
    CHECK_THROWS_AS(HeteroGraph::deserialize("EVOMAIL-GRAPH v2\n"), VersionMismatch);
    CHECK_THROWS_AS(HeteroGraph::deserialize(text.substr(0, text.size() - 5)), CorruptFile);
    CHECK_THROWS_AS(HeteroGraph::deserialize(""), CorruptFile);
}
