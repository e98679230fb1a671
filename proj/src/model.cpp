#include "evomail/model.hpp"

#include <cmath>
#include <cstring>

#include "evomail/error.hpp"
#include "evomail/graph.hpp"
#include "evomail/util.hpp"

namespace evomail {

namespace {

constexpr std::string_view kModelHeader = "EVOMAIL-MODEL v1\n";

Eigen::MatrixXd uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, fan_in)));
    Eigen::MatrixXd m(rows, cols);
    // Column-major fill keeps the draw order independent of Eigen internals.
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
    }
    return m;
}

}  // namespace

ModelState ModelState::initialize(const Hyper& h, std::uint64_t seed) {
    if (h.d_in < 1 || h.d_h < 1 || h.layers < 1 || h.top_k < 1 || h.d_p < 1 || h.attn_hidden < 1) {
        throw ConfigError("model dimensions must be positive");
    }
    if (!(h.tau > 0.0) || h.beta < 0.0 || h.gamma < 0.0 || h.dropout < 0.0 || h.dropout >= 1.0) {
        throw ConfigError("need tau > 0, beta >= 0, gamma >= 0, dropout in [0,1)");
    }
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    ModelState m;
    m.hyper = h;
    m.init_weight = uniform(rng, h.d_h, h.d_in, h.d_in);
    m.init_bias = Eigen::MatrixXd::Zero(h.d_h, 1);
    m.salience_logits = Eigen::MatrixXd::Zero(3, 1);
    m.attn_w1 = uniform(rng, h.attn_hidden, h.d_p, h.d_p);
    m.attn_b1 = Eigen::MatrixXd::Zero(h.attn_hidden, 1);
    m.attn_w2 = uniform(rng, 1, h.attn_hidden, h.attn_hidden);
    m.attn_b2 = Eigen::MatrixXd::Zero(1, 1);
    m.relation_weight = Eigen::MatrixXd::Zero(kRelationCount, 1);
    m.struct_weight = Eigen::MatrixXd::Zero(4, 1);
    m.relation_embed = uniform(rng, kRelationCount, h.d_h, h.d_h);
    for (int k = 0; k < h.layers; ++k) {
        LayerParams p;
        p.neigh = uniform(rng, h.d_h, h.d_h, h.d_h);
        p.self = uniform(rng, h.d_h, h.d_h, h.d_h);
        p.edge = uniform(rng, h.d_h, h.d_h, h.d_h);
        p.bias = Eigen::MatrixXd::Zero(h.d_h, 1);
        m.layers.push_back(std::move(p));
    }
    m.out_weight = uniform(rng, 1, static_cast<Eigen::Index>(h.layers) * h.d_h, static_cast<Eigen::Index>(h.layers) * h.d_h);
    m.out_bias = Eigen::MatrixXd::Zero(1, 1);
    return m;
}

ModelState ModelState::zeros_like(const ModelState& other) {
    ModelState z = other;
    z.visit([](const std::string&, Eigen::MatrixXd& t, bool) { t.setZero(); });
    return z;
}

Eigen::Vector3d ModelState::salience_weights() const {
    Eigen::Vector3d a = salience_logits.col(0);
    const double mx = a.maxCoeff();
    Eigen::Vector3d e = (a.array() - mx).exp();
    return e / e.sum();
}

double ModelState::weight_norm_squared() const {
    double total = 0.0;
    visit([&](const std::string&, const Eigen::MatrixXd& t, bool is_bias) {
        if (!is_bias) total += t.squaredNorm();
    });
    return total;
}

bool ModelState::all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Eigen::MatrixXd& t, bool) { ok = ok && t.allFinite(); });
    return ok;
}

void ModelState::add_scaled(const ModelState& b, double scale) {
    std::vector<const Eigen::MatrixXd*> other;
    b.visit([&](const std::string&, const Eigen::MatrixXd& t, bool) { other.push_back(&t); });
    std::size_t i = 0;
    visit([&](const std::string& name, Eigen::MatrixXd& t, bool) {
        if (i >= other.size() || other[i]->rows() != t.rows() || other[i]->cols() != t.cols()) {
            throw DimensionMismatch("tensor shape mismatch at " + name);
        }
        t += scale * *other[i++];
    });
}

bool ModelState::operator==(const ModelState& other) const {
    if (!(hyper == other.hyper) || layers.size() != other.layers.size()) return false;
    std::vector<const Eigen::MatrixXd*> theirs;
    other.visit([&](const std::string&, const Eigen::MatrixXd& t, bool) { theirs.push_back(&t); });
    std::size_t i = 0;
    bool equal = true;
    visit([&](const std::string&, const Eigen::MatrixXd& t, bool) {
        const auto* o = theirs[i++];
        equal = equal && t.rows() == o->rows() && t.cols() == o->cols() &&
                std::memcmp(t.data(), o->data(), sizeof(double) * static_cast<std::size_t>(t.size())) == 0;
    });
    return equal;
}

std::string ModelState::serialize() const {
    BinaryWriter w;
    w.raw(kModelHeader);
    w.u32(static_cast<std::uint32_t>(hyper.d_in));
    w.u32(static_cast<std::uint32_t>(hyper.d_h));
    w.u32(static_cast<std::uint32_t>(hyper.layers));
    w.u32(static_cast<std::uint32_t>(hyper.top_k));
    w.u32(static_cast<std::uint32_t>(hyper.d_p));
    w.u32(static_cast<std::uint32_t>(hyper.attn_hidden));
    w.f64(hyper.tau);
    w.f64(hyper.beta);
    w.f64(hyper.gamma);
    w.f64(hyper.dropout);
    std::uint32_t count = 0;
    visit([&](const std::string&, const Eigen::MatrixXd&, bool) { ++count; });
    w.u32(count);
    visit([&](const std::string& name, const Eigen::MatrixXd& t, bool) {
        w.str(name);
        w.u64(static_cast<std::uint64_t>(t.rows()));
        w.u64(static_cast<std::uint64_t>(t.cols()));
        for (Eigen::Index i = 0; i < t.size(); ++i) w.f64(t.data()[i]);
    });
    return w.bytes();
}

ModelState ModelState::deserialize(std::string_view bytes) {
    if (!bytes.starts_with(kModelHeader)) {
        if (bytes.starts_with("EVOMAIL-MODEL")) {
            const std::size_t eol = bytes.find('\n');
            throw VersionMismatch("model file: " + std::string(bytes.substr(0, eol)));
        }
        throw CorruptFile("missing EVOMAIL-MODEL header", 0);
    }
    BinaryReader in(bytes, kModelHeader.size());
    Hyper h;
    const auto dim = [&]() {
        const std::size_t at = in.offset();
        const std::uint32_t v = in.u32();
        if (v == 0 || v > (1u << 24)) throw CorruptFile("implausible model dimension", at);
        return static_cast<int>(v);
    };
    h.d_in = dim();
    h.d_h = dim();
    h.layers = dim();
    h.top_k = dim();
    h.d_p = dim();
    h.attn_hidden = dim();
    h.tau = in.f64();
    h.beta = in.f64();
    h.gamma = in.f64();
    h.dropout = in.f64();
    if (h.layers > 64) throw CorruptFile("implausible layer count", in.offset());
    const double params = static_cast<double>(h.d_h) * h.d_in + static_cast<double>(h.attn_hidden) * h.d_p +
                          3.0 * h.layers * static_cast<double>(h.d_h) * h.d_h;
    if (params * 8.0 > static_cast<double>(bytes.size())) throw CorruptFile("model data shorter than its shapes", in.offset());
    ModelState m;
    try {
        m = initialize(h, 0);
    } catch (const ConfigError& e) {
        throw CorruptFile(std::string("bad hyperparameters: ") + e.what(), in.offset());
    }
    std::uint32_t expected = 0;
    m.visit([&](const std::string&, Eigen::MatrixXd&, bool) { ++expected; });
    const std::size_t count_at = in.offset();
    if (in.u32() != expected) throw CorruptFile("tensor count mismatch", count_at);
    m.visit([&](const std::string& name, Eigen::MatrixXd& t, bool) {
        const std::size_t at = in.offset();
        if (in.str() != name) throw CorruptFile("unexpected tensor, wanted " + name, at);
        const std::uint64_t rows = in.u64();
        const std::uint64_t cols = in.u64();
        if (rows != static_cast<std::uint64_t>(t.rows()) || cols != static_cast<std::uint64_t>(t.cols())) {
            throw CorruptFile("shape mismatch for " + name, at);
        }
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = in.f64();
    });
    if (!in.done()) throw CorruptFile("trailing bytes after model", in.offset());
    return m;
}

}  // namespace evomail
