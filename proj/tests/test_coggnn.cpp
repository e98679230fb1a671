#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "evomail/coggnn.hpp"
#include "evomail/error.hpp"
#include "evomail/model.hpp"
#include "evomail/util.hpp"

using namespace evomail;

namespace {

constexpr int kDim = 8;

HeteroGraph email_graph(int n, const std::vector<std::tuple<int, int, Relation>>& edges, std::uint64_t seed) {
    HeteroGraph g;
    for (int i = 0; i < n; ++i) g.nodes.push_back({NodeKind::Email, "mail-" + std::to_string(i)});
    g.n_emails = n;
    for (auto [u, v, r] : edges) g.edges.push_back({std::min(u, v), std::max(u, v), r, 1.0});
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) { return std::tie(a.u, a.v) < std::tie(b.u, b.v); });
    Rng rng(seed);
    Eigen::MatrixXd x(kDim, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < kDim; ++i) x(i, j) = rng.uniform(-1.0, 1.0);
    g.features = x.sparseView();
    g.index();
    g.compute_structural_stats();
    return g;
}

HeteroGraph six_nodes() {
    return email_graph(6,
                       {{0, 1, Relation::Domain},
                        {1, 2, Relation::Semantic},
                        {0, 2, Relation::Temporal},
                        {2, 3, Relation::Sender},
                        {3, 4, Relation::Domain},
                        {4, 5, Relation::RepliedTo},
                        {1, 5, Relation::Semantic}},
                       5);
}

Hyper small_hyper(int layers = 2) {
    Hyper h;
    h.d_in = kDim;
    h.d_h = 6;
    h.layers = layers;
    h.top_k = 16;
    h.d_p = 16;
    h.attn_hidden = 5;
    h.tau = 0.7;
    h.beta = 0.8;
    h.gamma = 0.6;
    h.dropout = 0.0;
    return h;
}

// Fills the zero-initialised tensors so every gradient path is live.
ModelState live_model(const Hyper& h, std::uint64_t seed) {
    auto m = ModelState::initialize(h, seed);
    Rng rng(seed + 1);
    m.visit([&](const std::string& name, Eigen::MatrixXd& t, bool) {
        if (name == "salience_logits") return;
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            if (t.data()[i] == 0.0) t.data()[i] = rng.uniform(-0.5, 0.5);
        }
    });
    return m;
}

Eigen::VectorXd loss_weights(int n) {
    Eigen::VectorXd c(n);
    for (int i = 0; i < n; ++i) c[i] = 0.3 + 0.4 * i * (i % 2 == 0 ? 1 : -1);
    return c;
}

double weighted_loss(CogGnn& gnn, const ModelState& m, const Eigen::VectorXd& c) {
    const auto t = gnn.forward(m);
    return c.dot(t->score.head(c.size()));
}

// Straight-line forward with plain loops.
using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat to_mat(const Eigen::MatrixXd& a) {
    Mat out(static_cast<std::size_t>(a.rows()), Vec(static_cast<std::size_t>(a.cols())));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = a(i, j);
    return out;
}

Vec matvec(const Mat& a, const Vec& x) {
    Vec y(a.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) y[i] += a[i][j] * x[j];
    return y;
}

Vec ln_relu(Vec x) {
    for (auto& v : x) v = v > 0 ? v : 0;
    double mean = 0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    for (auto& v : x) v = (v - mean) / std::sqrt(var + 1e-5);
    return x;
}

double cosine(const Vec& a, const Vec& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0 || bb == 0) return 0;
    return ab / std::sqrt(aa * bb);
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<double> straight_line(const HeteroGraph& g, const ModelState& m, SemanticEncoder& enc) {
    const auto n = g.size();
    const Hyper& hy = m.hyper;
    const Eigen::MatrixXd xd(g.features);
    std::vector<Vec> h(n);
    for (std::size_t v = 0; v < n; ++v) {
        Vec x(static_cast<std::size_t>(hy.d_in));
        for (int i = 0; i < hy.d_in; ++i) x[static_cast<std::size_t>(i)] = xd(i, static_cast<Eigen::Index>(v));
        Vec pre = matvec(to_mat(m.init_weight), x);
        for (int i = 0; i < hy.d_h; ++i) pre[static_cast<std::size_t>(i)] += m.init_bias(i, 0);
        h[v] = ln_relu(pre);
    }
    // every neighbour is kept (K ≥ degree in these fixtures)
    std::vector<std::vector<std::pair<std::size_t, Relation>>> nbrs(n);
    for (const auto& e : g.edges) {
        nbrs[static_cast<std::size_t>(e.u)].push_back({static_cast<std::size_t>(e.v), e.relation});
        nbrs[static_cast<std::size_t>(e.v)].push_back({static_cast<std::size_t>(e.u), e.relation});
    }
    const auto mlp = [&](const Eigen::VectorXd& p) {
        double o = m.attn_b2(0, 0);
        for (int j = 0; j < hy.attn_hidden; ++j) {
            double z = m.attn_b1(j, 0);
            for (int i = 0; i < hy.d_p; ++i) z += m.attn_w1(j, i) * p[i];
            o += m.attn_w2(0, j) * (z > 0 ? z : 0);
        }
        return logistic(o);
    };
    std::vector<double> z(n, m.out_bias(0, 0));
    for (int k = 1; k <= hy.layers; ++k) {
        const auto& lp = m.layers[static_cast<std::size_t>(k) - 1];
        std::vector<Vec> next(n);
        for (std::size_t v = 0; v < n; ++v) {
            std::vector<double> e;
            for (auto [u, r] : nbrs[v]) {
                const NodeDescriptor a{"email", g.nodes[u].key};
                const NodeDescriptor b{"email", g.nodes[v].key};
                const auto p = enc.encode(render_pair_prompt(a, b, to_string(r), kDefaultTaskContext));
                const double st = m.struct_weight(0, 0) * m.relation_weight(static_cast<int>(r), 0) +
                                  m.struct_weight(1, 0) * std::log(1.0 + static_cast<double>(nbrs[u].size())) +
                                  m.struct_weight(2, 0) * std::log(1.0 + static_cast<double>(nbrs[v].size())) +
                                  m.struct_weight(3, 0) * 0.5;
                e.push_back(mlp(*p) + hy.beta * st + hy.gamma * cosine(h[u], h[v]));
            }
            double mx = -1e300;
            for (double x : e) mx = std::max(mx, x);
            double total = 0;
            for (double& x : e) total += (x = std::exp((x - mx) / hy.tau));
            Vec pre = matvec(to_mat(lp.self), h[v]);
            for (std::size_t j = 0; j < nbrs[v].size(); ++j) {
                const auto [u, r] = nbrs[v][j];
                const Vec wn = matvec(to_mat(lp.neigh), h[u]);
                Vec emb(static_cast<std::size_t>(hy.d_h));
                for (int i = 0; i < hy.d_h; ++i) emb[static_cast<std::size_t>(i)] = m.relation_embed(static_cast<int>(r), i);
                const Vec we = matvec(to_mat(lp.edge), emb);
                for (int i = 0; i < hy.d_h; ++i) pre[static_cast<std::size_t>(i)] += e[j] / total * (wn[static_cast<std::size_t>(i)] + we[static_cast<std::size_t>(i)]);
            }
            for (int i = 0; i < hy.d_h; ++i) pre[static_cast<std::size_t>(i)] += lp.bias(i, 0);
            next[v] = ln_relu(pre);
            for (int i = 0; i < hy.d_h; ++i) next[v][static_cast<std::size_t>(i)] += h[v][static_cast<std::size_t>(i)];
            for (int i = 0; i < hy.d_h; ++i) z[v] += m.out_weight(0, (k - 1) * hy.d_h + i) * next[v][static_cast<std::size_t>(i)];
        }
        h = std::move(next);
    }
    for (auto& v : z) v = logistic(v);
    return z;
}

}  // namespace

TEST_CASE("layer norm") {
    Eigen::VectorXd out(4);
    const double inv = layer_norm(Eigen::VectorXd::Constant(4, 3.0), out);
    CHECK(out.isZero(0.0));
    CHECK(inv == doctest::Approx(1.0 / std::sqrt(1e-5)));
    Eigen::VectorXd in(5);
    in << 1, -2, 3, 0.5, 7;
    Eigen::VectorXd y(5);
    layer_norm(in, y);
    CHECK(std::abs(y.mean()) < 1e-12);
    CHECK(y.squaredNorm() / 5 == doctest::Approx(1.0).epsilon(1e-4));
    layer_norm(in * 1e6, y);
    CHECK(y.allFinite());
}

TEST_CASE("initial embeddings") {
    auto g = email_graph(3, {}, 1);
    g.features.setZero();
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    auto m = ModelState::initialize(small_hyper(), 1);
    const auto t = gnn.forward(m);
    CHECK(t->h[0].isZero(0.0));

    auto big = email_graph(3, {{0, 1, Relation::Domain}}, 2);
    big.features *= 1e6;
    CogGnn gnn2(big, enc);
    const auto t2 = gnn2.forward(m);
    for (const auto& h : t2->h) CHECK(h.allFinite());
    for (int v = 0; v < 3; ++v) CHECK(std::abs(t2->h[0].col(v).mean()) < 1e-6);

    auto wrong = small_hyper();
    wrong.d_in = kDim + 1;
    CHECK_THROWS_AS(gnn.forward(ModelState::initialize(wrong, 1)), DimensionMismatch);
    HashedEncoder other(32);
    CogGnn gnn3(g, other);
    CHECK_THROWS_AS(gnn3.forward(m), DimensionMismatch);
}

TEST_CASE("salience") {
    auto g = email_graph(2, {{0, 1, Relation::Domain}}, 3);
    const Eigen::VectorXd h = Eigen::VectorXd::Ones(4);
    CHECK(g.slot_struct[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(salience_score(g, 0, h, h, {1, 0, 0}) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(salience_score(g, 0, h, h, {0, 0, 1}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(salience_score(g, 0, h, Eigen::VectorXd::Zero(4), {0, 0, 1}) == 0.0);
    CHECK(salience_score(g, 0, h, h, {0, 1, 0}) == 0.0);  // no shared entities
    ModelState m;
    m.salience_logits = Eigen::MatrixXd::Constant(3, 1, 0.7);
    CHECK(m.salience_weights().isApprox(Eigen::Vector3d::Constant(1.0 / 3.0)));
    m.salience_logits << 5, -2, 1;
    CHECK(m.salience_weights().sum() == doctest::Approx(1.0));
}

TEST_CASE("top-k selection") {
    auto h = small_hyper();
    h.top_k = 8;
    const auto m = ModelState::initialize(h, 4);
    auto star = email_graph(4, {{0, 1, Relation::Domain}, {0, 2, Relation::Domain}, {0, 3, Relation::Domain}}, 4);
    HashedEncoder enc(16);
    CogGnn gnn(star, enc);
    const auto same = [](int) { return Eigen::VectorXd::Ones(3).eval(); };
    CHECK(gnn.select(0, m, same).size() == 3);

    auto five = email_graph(6, {{0, 1, Relation::Domain}, {0, 2, Relation::Domain}, {0, 3, Relation::Domain},
                                {0, 4, Relation::Domain}, {0, 5, Relation::Domain}}, 5);
    auto h2 = h;
    h2.top_k = 2;
    const auto m2 = ModelState::initialize(h2, 4);
    CogGnn gnn5(five, enc);
    const auto sel = gnn5.select(0, m2, same);
    REQUIRE(sel.size() == 2);
    CHECK(five.neighbor(sel[0]) == 1);
    CHECK(five.neighbor(sel[1]) == 2);

    auto lone = email_graph(2, {}, 6);
    CogGnn gnn_lone(lone, enc);
    CHECK(gnn_lone.select(0, m, same).empty());
}

TEST_CASE("top-k selection matches a full sort") {
    HashedEncoder enc(16);
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.index(199));
        std::vector<std::tuple<int, int, Relation>> edges;
        std::set<std::pair<int, int>> used;
        for (int e = 0; e < 3 * n; ++e) {
            const int u = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
            const int v = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
            if (u == v || !used.insert({std::min(u, v), std::max(u, v)}).second) continue;
            edges.emplace_back(u, v, Relation::Semantic);
        }
        auto g = email_graph(n, edges, static_cast<std::uint64_t>(trial));
        auto hy = small_hyper();
        hy.top_k = 1 + static_cast<int>(rng.index(6));
        auto m = ModelState::initialize(hy, static_cast<std::uint64_t>(trial));
        m.salience_logits << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
        // coarse embeddings create salience ties
        Eigen::MatrixXd h0(3, n);
        for (int v = 0; v < n; ++v) h0.col(v) << static_cast<double>(rng.index(2)), 1.0, static_cast<double>(rng.index(2));
        CogGnn gnn(g, enc);
        const auto w = m.salience_weights();
        for (int v = 0; v < n; ++v) {
            std::vector<std::pair<double, int>> all;
            for (int s = g.slot_begin(v); s < g.slot_end(v); ++s) {
                all.emplace_back(salience_score(g, s, h0.col(g.neighbor(s)), h0.col(v), w), g.neighbor(s));
            }
            std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
                return a.first != b.first ? a.first > b.first : a.second < b.second;
            });
            std::vector<int> expect;
            for (std::size_t i = 0; i < std::min<std::size_t>(all.size(), static_cast<std::size_t>(hy.top_k)); ++i) {
                expect.push_back(all[i].second);
            }
            std::sort(expect.begin(), expect.end());
            std::vector<int> got;
            for (int s : gnn.select(v, m, [&](int u) { return h0.col(u).eval(); })) got.push_back(g.neighbor(s));
            CHECK(got == expect);
        }
    }
}

TEST_CASE("attention normalisation") {
    Eigen::VectorXd one(1);
    one << 3.2;
    CHECK(normalize_attention(one, 0.5)[0] == 1.0);
    for (double tau : {0.1, 1.0, 3.0}) {
        Eigen::VectorXd e(2);
        e << 0.4 + tau * std::log(2.0), 0.4;
        const auto a = normalize_attention(e, tau);
        CHECK(std::abs(a[0] - 2.0 / 3.0) < 1e-9);
        CHECK(std::abs(a[1] - 1.0 / 3.0) < 1e-9);
    }
    Eigen::VectorXd big(3);
    big << 1000, 999, -1000;
    const auto a = normalize_attention(big, 1.0);
    CHECK(a.allFinite());
    CHECK(a.sum() == doctest::Approx(1.0));
    Eigen::VectorXd e(3);
    e << 1.0, 0.2, -0.5;
    CHECK(normalize_attention(e, 0.5)[0] > normalize_attention(e, 1.0)[0]);
    CHECK(normalize_attention(e, 1.0)[0] > normalize_attention(e, 2.0)[0]);
}

TEST_CASE("attention rows are a simplex") {
    const auto g = six_nodes();
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    auto hy = small_hyper();
    hy.top_k = 2;
    const auto t = gnn.forward(live_model(hy, 8));
    for (int k = 0; k < hy.layers; ++k) {
        for (int v = 0; v < t->size(); ++v) {
            const int b = t->sel_begin[static_cast<std::size_t>(v)];
            const int e = t->sel_begin[static_cast<std::size_t>(v) + 1];
            if (e == b) continue;
            const auto seg = t->alpha[static_cast<std::size_t>(k)].segment(b, e - b);
            CHECK(std::abs(seg.sum() - 1.0) < 1e-6);
            CHECK((seg.array() >= 0.0).all());
        }
    }
}

TEST_CASE("struct features for an adjacent pair") {
    const auto g = email_graph(2, {{0, 1, Relation::Domain}}, 9);
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    auto m = live_model(small_hyper(), 9);
    const auto t = gnn.forward(m);
    REQUIRE(t->pair_count() == 2);
    const auto& st = t->pair_struct[0];
    CHECK(st[0] == m.relation_weight(static_cast<int>(Relation::Domain), 0));
    CHECK(st[1] == doctest::Approx(std::log(2.0)));
    CHECK(st[2] == doctest::Approx(std::log(2.0)));
    CHECK(st[3] == 0.5);
}

TEST_CASE("message passing by hand") {
    const auto g = email_graph(2, {{0, 1, Relation::Domain}}, 10);
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    auto hy = small_hyper(1);
    auto m = ModelState::initialize(hy, 10);
    m.layers[0].self = Eigen::MatrixXd::Identity(hy.d_h, hy.d_h);
    m.layers[0].neigh = Eigen::MatrixXd::Identity(hy.d_h, hy.d_h);
    m.relation_embed.setZero();
    const auto t = gnn.forward(m);
    CHECK(t->alpha[0][0] == 1.0);
    CHECK(t->pre[1].col(0).isApprox(t->h[0].col(0) + t->h[0].col(1), 1e-14));

    // isolated node: message is zero
    const auto lone = email_graph(1, {}, 11);
    CogGnn gl(lone, enc);
    const auto tl = gl.forward(m);
    Eigen::VectorXd expect(hy.d_h);
    layer_norm((m.layers[0].self * tl->h[0].col(0)).cwiseMax(0.0), expect);
    CHECK(tl->h[1].col(0).isApprox(expect + tl->h[0].col(0), 1e-12));
}

TEST_CASE("prediction head") {
    const auto g = six_nodes();
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    auto m = live_model(small_hyper(), 12);
    m.out_weight.setZero();
    m.out_bias.setZero();
    CHECK((gnn.forward(m)->score.array() == 0.5).all());
    m.out_bias(0, 0) = 20.0;
    CHECK((gnn.forward(m)->score.array() > 0.999999).all());

    const auto empty = email_graph(4, {}, 13);
    CogGnn ge(empty, enc);
    const auto t = ge.forward(live_model(small_hyper(), 13));
    CHECK(email_scores(*t, 4).allFinite());
    CHECK((email_scores(*t, 4).array() > 0.0).all());
}

TEST_CASE("forward matches a straight-line implementation") {
    HashedEncoder enc(16);
    for (const auto& g : {email_graph(2, {{0, 1, Relation::Domain}}, 14), six_nodes()}) {
        CogGnn gnn(g, enc);
        const auto m = live_model(small_hyper(), 14);
        const auto t = gnn.forward(m);
        const auto ref = straight_line(g, m, enc);
        for (std::size_t v = 0; v < ref.size(); ++v) CHECK(std::abs(t->score[static_cast<Eigen::Index>(v)] - ref[v]) < 1e-12);
    }
}

TEST_CASE("determinism and dropout") {
    const auto g = six_nodes();
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    auto m = live_model(small_hyper(), 15);
    const auto a = gnn.forward(m);
    const auto b = gnn.forward(m);
    for (std::size_t k = 0; k < a->h.size(); ++k) CHECK(a->h[k] == b->h[k]);
    CHECK(a->score == b->score);
    CHECK(gnn.forward(m, true, 3)->score == a->score);

    m.hyper.dropout = 0.5;
    const auto d1 = gnn.forward(m, true, 3);
    const auto d2 = gnn.forward(m, true, 3);
    CHECK(d1->score == d2->score);
    CHECK(d1->score != a->score);
    CHECK(gnn.forward(m, false)->score == a->score);
}

TEST_CASE("permutation equivariance") {
    const auto g = six_nodes();
    const std::vector<int> perm = {3, 5, 0, 1, 4, 2};
    HeteroGraph p;
    p.nodes.resize(6);
    p.n_emails = 6;
    for (int i = 0; i < 6; ++i) p.nodes[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = g.nodes[static_cast<std::size_t>(i)];
    for (const auto& e : g.edges) {
        const int u = perm[static_cast<std::size_t>(e.u)];
        const int v = perm[static_cast<std::size_t>(e.v)];
        p.edges.push_back({std::min(u, v), std::max(u, v), e.relation, e.weight});
    }
    std::sort(p.edges.begin(), p.edges.end(), [](const Edge& a, const Edge& b) { return std::tie(a.u, a.v) < std::tie(b.u, b.v); });
    const Eigen::MatrixXd x(g.features);
    Eigen::MatrixXd px(x.rows(), 6);
    for (int i = 0; i < 6; ++i) px.col(perm[static_cast<std::size_t>(i)]) = x.col(i);
    p.features = px.sparseView();
    p.index();
    p.compute_structural_stats();
    HashedEncoder enc(16);
    CogGnn ga(g, enc);
    CogGnn gb(p, enc);
    const auto m = live_model(small_hyper(), 16);
    const auto sa = ga.forward(m)->score;
    const auto sb = gb.forward(m)->score;
    for (int i = 0; i < 6; ++i) CHECK(sa[i] == doctest::Approx(sb[perm[static_cast<std::size_t>(i)]]).epsilon(1e-12));
}

TEST_CASE("gradients match central finite differences") {
    auto g = six_nodes();
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    // finite differences are only valid away from ReLU kinks
    const auto kink_margin = [](const ForwardTrace& t) {
        double margin = t.pre0.cwiseAbs().minCoeff();
        for (std::size_t k = 1; k < t.pre.size(); ++k) margin = std::min(margin, t.pre[k].cwiseAbs().minCoeff());
        return margin;
    };
    std::uint64_t seed = 17;
    while (kink_margin(*gnn.forward(live_model(small_hyper(), seed))) < 0.02) ++seed;
    CHECK(seed < 60);
    const auto m = live_model(small_hyper(), seed);
    const auto c = loss_weights(6);
    const auto t = gnn.forward(m);
    BackwardRequest req;
    for (int v = 0; v < 6; ++v) {
        req.seeds.emplace_back(v, c[v]);
        req.input_columns.push_back(v);
    }
    auto grads = ModelState::zeros_like(m);
    const auto inputs = gnn.backward(m, *t, req, &grads);

    const double step = 1e-4;
    int groups = 0;
    m.visit([&](const std::string& name, const Eigen::MatrixXd& tensor, bool) {
        if (name == "salience_logits") return;
        Eigen::MatrixXd fd(tensor.rows(), tensor.cols());
        for (Eigen::Index i = 0; i < tensor.size(); ++i) {
            auto plus = m;
            auto minus = m;
            plus.visit([&](const std::string& n2, Eigen::MatrixXd& t2, bool) { if (n2 == name) t2.data()[i] += step; });
            minus.visit([&](const std::string& n2, Eigen::MatrixXd& t2, bool) { if (n2 == name) t2.data()[i] -= step; });
            fd.data()[i] = (weighted_loss(gnn, plus, c) - weighted_loss(gnn, minus, c)) / (2 * step);
        }
        Eigen::MatrixXd an;
        grads.visit([&](const std::string& n2, const Eigen::MatrixXd& t2, bool) { if (n2 == name) an = t2; });
        const double rel = (fd - an).norm() / std::max(fd.norm() + an.norm(), 1e-12);
        INFO(name, " rel ", rel);
        CHECK(rel < 1e-3);
        ++groups;
    });
    CHECK(groups == 10 + 4 * 2 + 2 - 1);

    Eigen::MatrixXd x(g.features);
    for (int v = 0; v < 6; ++v) {
        Eigen::VectorXd fd(kDim);
        for (int i = 0; i < kDim; ++i) {
            const double orig = x(i, v);
            g.features.coeffRef(i, v) = orig + step;
            const double lp = weighted_loss(gnn, m, c);
            g.features.coeffRef(i, v) = orig - step;
            const double lm = weighted_loss(gnn, m, c);
            g.features.coeffRef(i, v) = orig;
            fd[i] = (lp - lm) / (2 * step);
        }
        const auto& an = inputs[static_cast<std::size_t>(v)];
        CHECK((fd - an).norm() / std::max(fd.norm() + an.norm(), 1e-12) < 1e-3);
    }
}

TEST_CASE("self-target is stationary") {
    const auto g = six_nodes();
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    const auto m = live_model(small_hyper(), 18);
    const auto t = gnn.forward(m);
    BackwardRequest req;
    for (int v = 0; v < 6; ++v) req.seeds.emplace_back(v, 2.0 * (t->score[v] - t->score[v]));
    auto grads = ModelState::zeros_like(m);
    gnn.backward(m, *t, req, &grads);
    CHECK(grads.weight_norm_squared() == 0.0);
}

TEST_CASE("input gradient of an isolated node by the chain rule") {
    const auto g = email_graph(1, {}, 19);
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    const auto hy = small_hyper(1);
    const auto m = live_model(hy, 19);
    const auto t = gnn.forward(m);
    BackwardRequest req{{{0, 1.0}}, {0}};
    const auto got = gnn.backward(m, *t, req, nullptr)[0];

    const auto ln_jacobian = [](const Eigen::VectorXd& y, double inv_std) {
        const auto n = y.size();
        Eigen::MatrixXd j = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n)) -
                            y * y.transpose() / static_cast<double>(n);
        return (inv_std * j).eval();
    };
    const auto relu_mask = [](const Eigen::VectorXd& pre) {
        return pre.unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; }).asDiagonal().toDenseMatrix();
    };
    const Eigen::VectorXd x = Eigen::MatrixXd(g.features).col(0);
    const Eigen::VectorXd pre0 = m.init_weight * x + m.init_bias.col(0);
    const Eigen::MatrixXd dh0_dx = ln_jacobian(t->normed[0].col(0), t->inv_std[0][0]) * relu_mask(pre0) * m.init_weight;
    const Eigen::VectorXd pre1 = m.layers[0].self * t->h[0].col(0) + m.layers[0].bias.col(0);
    const Eigen::MatrixXd dh1_dh0 =
        ln_jacobian(t->normed[1].col(0), t->inv_std[1][0]) * relu_mask(pre1) * m.layers[0].self +
        Eigen::MatrixXd::Identity(hy.d_h, hy.d_h);
    const double y = t->score[0];
    const Eigen::VectorXd expect = (y * (1 - y) * m.out_weight * dh1_dh0 * dh0_dx).transpose();
    CHECK(got.isApprox(expect, 1e-10));
}

TEST_CASE("non-finite gradient is reported") {
    const auto g = six_nodes();
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    const auto m = live_model(small_hyper(), 20);
    const auto t = gnn.forward(m);
    auto grads = ModelState::zeros_like(m);
    BackwardRequest req{{{0, std::numeric_limits<double>::quiet_NaN()}}, {}};
    CHECK_THROWS_AS(gnn.backward(m, *t, req, &grads), NonFiniteGradient);
}

TEST_CASE("local pass agrees with the full pass") {
    const auto g = six_nodes();
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    auto hy = small_hyper();
    hy.top_k = 2;
    const auto m = live_model(hy, 21);
    const auto full = gnn.forward(m);
    gnn.set_base(full);
    const Eigen::MatrixXd x(g.features);
    for (int v = 0; v < 6; ++v) {
        const auto local = gnn.forward_local(m, {v, x.col(v), std::nullopt});
        CHECK(local->score[0] == doctest::Approx(full->score[v]).epsilon(1e-12));
    }
    const auto iso = gnn.forward_local(m, {-1, x.col(0), std::nullopt});
    CHECK(iso->size() == 1);
    CHECK(std::isfinite(iso->score[0]));
    CHECK_THROWS_AS(gnn.forward_local(m, {0, Eigen::VectorXd::Zero(3), std::nullopt}), DimensionMismatch);
}

TEST_CASE("model file round-trip") {
    const auto m = live_model(small_hyper(), 22);
    const auto bytes = m.serialize();
    CHECK(bytes.starts_with("EVOMAIL-MODEL v1\n"));
    const auto back = ModelState::deserialize(bytes);
    CHECK(back == m);
    CHECK(back.serialize() == bytes);
    CHECK_THROWS_AS(ModelState::deserialize("EVOMAIL-MODEL v9\n"), VersionMismatch);
    CHECK_THROWS_AS(ModelState::deserialize(bytes.substr(0, bytes.size() / 2)), CorruptFile);
    CHECK_THROWS_AS(ModelState::deserialize("junk"), CorruptFile);
    auto bad = small_hyper();
    bad.tau = 0.0;
    CHECK_THROWS_AS(ModelState::initialize(bad, 1), ConfigError);
    bad = small_hyper();
    bad.dropout = 1.0;
    CHECK_THROWS_AS(ModelState::initialize(bad, 1), ConfigError);
}
