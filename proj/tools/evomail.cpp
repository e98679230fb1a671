#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "evomail/error.hpp"
#include "evomail/harness.hpp"
#include "evomail/util.hpp"

namespace fs = std::filesystem;
using namespace evomail;

namespace {

ExperimentConfig config_or_default(const std::string& path) {
    if (path.empty()) return {};
    return load_config(path);
}

std::vector<fs::path> as_paths(const std::vector<std::string>& in) { return {in.begin(), in.end()}; }

std::vector<int> labeled(const std::vector<EmailDocument>& docs, const std::vector<int>& nodes) {
    std::vector<int> out;
    for (int v : nodes) {
        if (docs[static_cast<std::size_t>(v)].label) out.push_back(v);
    }
    return out;
}

void print_history(const std::vector<IterationRecord>& history) {
    std::cout << history_table(history, false);
    // wall time and memory size stand in for update latency and compression
    std::cerr << "update latency and memory (proxy measurements)\n" << history_table(history, true);
}

void write_or_print(const std::string& path, const Report& report) {
    if (path.empty() || path == "-") {
        std::cout << report.to_text();
    } else {
        write_file_atomic(path, report.to_text());
    }
}

int cmd_ingest(const std::vector<std::string>& inputs, std::size_t vocab_cap, const std::string& norm,
               const std::string& out) {
    const auto docs = load_corpus(as_paths(inputs));
    FeatureFile file;
    file.space = FeatureSpace::fit(docs, vocab_cap, {}, norm == "none" ? TextNorm::None : TextNorm::L2);
    for (const auto& d : docs) file.records.push_back({d, file.space.assemble(d).full});
    write_file_atomic(out, write_feature_records(file));
    std::cout << docs.size() << " documents, " << file.space.dim() << " features\n";
    return 0;
}

int cmd_gen(const std::string& phase, int n, double ratio, std::uint64_t seed, const std::string& out) {
    PhaseSpec spec;
    spec.phase = parse_phase(phase);
    spec.n_emails = n;
    spec.spam_ratio = ratio;
    spec.seed = seed;
    const auto messages = generate_phase_messages(spec);
    const fs::path path(out);
    if (path.extension() == ".mbox") {
        write_file_atomic(path, to_mbox(messages));
    } else {
        fs::create_directories(path);
        for (std::size_t i = 0; i < messages.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "%05zu.eml", i);
            write_file_atomic(path / name, messages[i]);
        }
    }
    std::cout << messages.size() << " messages written to " << out << "\n";
    return 0;
}

int cmd_train(const std::vector<std::string>& corpus, const std::string& config_path, const std::string& out_model,
              int iters) {
    auto config = config_or_default(config_path);
    if (iters > 0) config.evolution.iterations = iters;
    config.validate();
    const auto docs = load_corpus(as_paths(corpus));
    const auto split = split_indices(static_cast<int>(docs.size()), config.test_fraction, config.split_seed);
    const auto train = labeled(docs, split.train);
    if (train.empty()) throw EmptyInput("corpus has no labeled training documents");
    auto encoder = make_encoder(config);
    auto fit = fit_detector(docs, train, labeled(docs, split.test), config, *encoder);
    print_history(fit.history);
    if (!out_model.empty()) save_state(fit.detector, out_model);
    return 0;
}

int cmd_evolve(const std::vector<std::string>& corpus, const std::string& config_path, int iters,
               const std::string& model_path, std::string out_model) {
    if (model_path.empty()) return cmd_train(corpus, config_path, out_model, iters);
    auto detector = load_state(model_path);
    if (!config_path.empty()) {
        // the feature space and model shape stay frozen; training knobs come from the file
        const auto config = load_config(config_path);
        detector.config.evolution = config.evolution;
        detector.config.test_fraction = config.test_fraction;
        detector.config.split_seed = config.split_seed;
    }
    const auto docs = load_corpus(as_paths(corpus));
    const auto split = split_indices(static_cast<int>(docs.size()), detector.config.test_fraction,
                                     detector.config.split_seed);
    auto encoder = make_encoder(detector.config);
    auto fit = evolve_detector(detector, docs, labeled(docs, split.train), labeled(docs, split.test), *encoder,
                               iters > 0 ? iters : detector.config.evolution.iterations);
    print_history(fit.history);
    if (out_model.empty()) out_model = model_path;
    save_state(fit.detector, out_model);
    return 0;
}

int cmd_detect(const std::string& model_path, const std::vector<std::string>& input, const std::string& report_path) {
    const auto detector = load_state(model_path);
    const auto docs = load_corpus(as_paths(input));
    auto encoder = make_encoder(detector.config);
    const auto scores = score_documents(detector, docs, *encoder);
    Report report;
    report.add("scenario", "detect");
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const double f = scores[static_cast<Eigen::Index>(i)];
        const std::string verdict = f >= 0.5 ? "spam" : "ham";
        const std::string p = "email." + std::to_string(i) + ".";
        report.add(p + "id", docs[i].id);
        report.add(p + "score", f);
        report.add(p + "verdict", verdict);
        std::cout << docs[i].id << "\t" << format_fixed(f, 4) << "\t" << verdict << "\n";
        if (docs[i].label) {
            s.push_back(f);
            y.push_back(*docs[i].label == Label::Spam ? 1 : 0);
        }
    }
    if (!s.empty()) {
        const auto m = classification_metrics(s, y, 0.5, detector.config.ks);
        add_metrics(report, "metric.", m);
        std::cerr << metrics_table(m);
    }
    if (!report_path.empty()) write_or_print(report_path, report);
    return 0;
}

int cmd_explain(const std::string& model_path, const std::vector<std::string>& input, const std::string& email_id,
                const std::string& report_path) {
    const auto detector = load_state(model_path);
    const auto docs = load_corpus(as_paths(input));
    auto encoder = make_encoder(detector.config);
    const auto ex = explain_document(detector, docs, email_id, *encoder);
    std::cout << ex.text;
    if (report_path.empty()) return 0;
    Report r;
    r.add("scenario", "explain");
    r.add("email_id", email_id);
    r.add("score", ex.score);
    r.add("path.stop", std::string(to_string(ex.path.terminated_by)));
    for (std::size_t i = 0; i < ex.path.steps.size(); ++i) {
        const auto& step = ex.path.steps[i];
        const std::string p = "path." + std::to_string(i) + ".";
        r.add(p + "node", std::to_string(step.node));
        r.add(p + "kind", std::string(to_string(step.kind)));
        r.add(p + "relation", step.relation ? std::string(to_string(*step.relation)) : "-");
        r.add(p + "confidence", step.confidence);
        if (i < ex.attributions.size()) {
            for (std::size_t j = 0; j < ex.attributions[i].size(); ++j) {
                const auto& a = ex.attributions[i][j];
                r.add(p + "feature." + std::to_string(j), a.name + " " + format_double(a.importance));
            }
        }
    }
    write_or_print(report_path, r);
    return 0;
}

int cmd_eval(const std::string& scenario, const std::string& config_path, const std::vector<std::string>& corpus,
             const std::string& report_path) {
    const auto config = config_or_default(config_path);
    Report report;
    if (scenario == "shift") {
        const auto phases = shift_corpora(config.synthetic);
        const auto result = run_shift(phases[0], phases[1], phases[2], config);
        report = shift_report(config, result);
        for (const auto& p : result.phases) {
            std::cout << to_string(p.phase) << "  auc " << format_fixed(p.auc, 4) << "  f1 " << format_fixed(p.f1, 4)
                      << "\n";
        }
        std::cout << "novel f1 " << format_fixed(result.novel_f1, 4) << "\ndelta auc "
                  << format_fixed(result.delta, 4) << "\n";
    } else {
        std::vector<EmailDocument> docs;
        if (corpus.empty()) {
            docs = generate_phase_corpus(config.synthetic);
        } else {
            docs = load_corpus(as_paths(corpus));
        }
        if (scenario == "static") {
            const auto result = run_static(docs, config);
            report = static_report(config, result, "static");
            std::cout << metrics_table(result.metrics);
            print_history(result.history);
        } else if (scenario == "crossmodal") {
            report.add("scenario", "crossmodal");
            for (auto m : {Modality::TextOnly, Modality::TextMeta, Modality::FullGraph}) {
                const auto result = run_cross_modal(docs, config, m);
                const auto part = static_report(config, result, "crossmodal");
                for (const auto& [k, v] : part.entries()) {
                    if (k.starts_with("metric.")) report.add(std::string(to_string(m)) + "." + k, v);
                }
                std::cout << "== " << to_string(m) << "\n" << metrics_table(result.metrics);
            }
        } else {
            throw ConfigError("unknown scenario: " + scenario);
        }
    }
    if (!report_path.empty()) write_or_print(report_path, report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EvoMail spam and phishing detector"};
    app.require_subcommand(1);

    std::vector<std::string> inputs;
    std::size_t vocab_cap = 2000;
    std::string out;
    auto* ingest = app.add_subcommand("ingest", "parse mail and write feature records");
    ingest->add_option("paths", inputs, "eml, mbox or directories")->required();
    ingest->add_option("--vocab-cap", vocab_cap);
    std::string text_norm = "l2";
    ingest->add_option("--text-norm", text_norm)->check(CLI::IsMember({"l2", "none"}));
    ingest->add_option("--out", out)->required();

    std::string phase = "P1";
    int n = 1000;
    double ratio = 0.5;
    std::uint64_t seed = 7;
    auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic tactic-drift corpus");
    gen->add_option("--phase", phase);
    gen->add_option("--n", n);
    gen->add_option("--ratio", ratio);
    gen->add_option("--seed", seed);
    gen->add_option("--out", out, "*.mbox file or a directory of .eml files")->required();

    std::vector<std::string> corpus;
    std::string config;
    std::string model;
    auto* train = app.add_subcommand("train", "train a detector");
    train->add_option("--corpus", corpus)->required();
    train->add_option("--config", config);
    train->add_option("--out-model", out)->required();

    int iters = 0;
    auto* evolve = app.add_subcommand("evolve", "run evolution iterations");
    evolve->add_option("--corpus", corpus)->required();
    evolve->add_option("--config", config);
    evolve->add_option("--iters", iters);
    evolve->add_option("--model", model, "detector to continue from");
    evolve->add_option("--out-model", out);

    std::string report;
    auto* detect = app.add_subcommand("detect", "score emails");
    detect->add_option("--model", model)->required();
    detect->add_option("--input", inputs)->required();
    detect->add_option("--report", report);

    std::string email_id;
    auto* explain = app.add_subcommand("explain", "evidence path and feature attributions for one email");
    explain->add_option("--model", model)->required();
    explain->add_option("--input", inputs)->required();
    explain->add_option("--email-id", email_id)->required();
    explain->add_option("--report", report);

    std::string scenario;
    auto* eval = app.add_subcommand("eval", "run an experiment scenario");
    eval->add_option("--scenario", scenario)->required()->check(CLI::IsMember({"static", "shift", "crossmodal"}));
    eval->add_option("--config", config);
    eval->add_option("--corpus", corpus);
    eval->add_option("--report", report);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) return cmd_ingest(inputs, vocab_cap, text_norm, out);
        if (*gen) return cmd_gen(phase, n, ratio, seed, out);
        if (*train) return cmd_train(corpus, config, out, 0);
        if (*evolve) return cmd_evolve(corpus, config, iters, model, out);
        if (*detect) return cmd_detect(model, inputs, report);
        if (*explain) return cmd_explain(model, inputs, email_id, report);
        if (*eval) return cmd_eval(scenario, config, corpus, report);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
