#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace evomail {

struct Hyper {
    int d_in = 0;
    int d_h = 64;
    int layers = 2;
    int top_k = 16;
    int d_p = 256;
    int attn_hidden = 64;
    double tau = 1.0;
    double beta = 1.0;
    double gamma = 0.5;
    double dropout = 0.1;

    bool operator==(const Hyper&) const = default;
};

struct LayerParams {
    Eigen::MatrixXd neigh;  // d_h × d_h
    Eigen::MatrixXd self;   // d_h × d_h
    Eigen::MatrixXd edge;   // d_h × d_h
    Eigen::MatrixXd bias;   // d_h × 1
};

/// Every learnable tensor of the model. Gradients use the same layout.
struct ModelState {
    Hyper hyper;
    Eigen::MatrixXd init_weight;      // d_h × d_in
    Eigen::MatrixXd init_bias;        // d_h × 1
    Eigen::MatrixXd salience_logits;  // 3 × 1: a_s, a_f, a_c
    Eigen::MatrixXd attn_w1;          // hidden × d_p
    Eigen::MatrixXd attn_b1;          // hidden × 1
    Eigen::MatrixXd attn_w2;          // 1 × hidden
    Eigen::MatrixXd attn_b2;          // 1 × 1
    Eigen::MatrixXd relation_weight;  // |R| × 1
    Eigen::MatrixXd struct_weight;    // 4 × 1
    Eigen::MatrixXd relation_embed;   // |R| × d_h
    std::vector<LayerParams> layers;
    Eigen::MatrixXd out_weight;  // 1 × (L·d_h)
    Eigen::MatrixXd out_bias;    // 1 × 1

    /// Seeded init: weights uniform in ±1/sqrt(fan_in), biases zero, salience
    /// logits, relation and structural weights zero. Throws ConfigError on bad
    /// hyperparameters.
    static ModelState initialize(const Hyper& hyper, std::uint64_t seed);
    /// Same shapes, all zeros.
    static ModelState zeros_like(const ModelState& other);

    /// f(name, tensor, is_bias) over every tensor in a fixed order.
    template <typename F>
    void visit(F&& f) {
        visit_impl(*this, f);
    }
    template <typename F>
    void visit(F&& f) const {
        visit_impl(*this, f);
    }

    Eigen::Vector3d salience_weights() const;
    /// Sum of squares of every non-bias tensor.
    double weight_norm_squared() const;
    bool all_finite() const;

    /// a += scale · b, tensor by tensor.
    void add_scaled(const ModelState& b, double scale);

    /// Binary block starting with "EVOMAIL-MODEL v1\n"; little-endian.
    std::string serialize() const;
    static ModelState deserialize(std::string_view bytes);

    bool operator==(const ModelState& other) const;

private:
    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f) {
        f("init_weight", s.init_weight, false);
        f("init_bias", s.init_bias, true);
        f("salience_logits", s.salience_logits, false);
        f("attn_w1", s.attn_w1, false);
        f("attn_b1", s.attn_b1, true);
        f("attn_w2", s.attn_w2, false);
        f("attn_b2", s.attn_b2, true);
        f("relation_weight", s.relation_weight, false);
        f("struct_weight", s.struct_weight, false);
        f("relation_embed", s.relation_embed, false);
        for (std::size_t k = 0; k < s.layers.size(); ++k) {
            const std::string p = "layer" + std::to_string(k + 1) + ".";
            f(p + "neigh", s.layers[k].neigh, false);
            f(p + "self", s.layers[k].self, false);
            f(p + "edge", s.layers[k].edge, false);
            f(p + "bias", s.layers[k].bias, true);
        }
        f("out_weight", s.out_weight, false);
        f("out_bias", s.out_bias, true);
    }
};

}  // namespace evomail
