#include "ccl/harness/results.hpp"

#include "ccl/diag/capacity.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

namespace ccl::harness {

namespace {

Aggregate aggregate_of(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    double sum = 0;
    for (double v : values) sum += v;
    a.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

}  // namespace

void recompute_aggregates(MethodOutcome& mo) {
    auto gather = [&](auto field) {
        std::vector<double> v;
        for (const auto& s : mo.seeds)
            if (!s.failed) v.push_back(field(s));
        return v;
    };
    mo.acc = aggregate_of(gather([](const SeedOutcome& s) { return s.acc; }));
    mo.fgt = aggregate_of(gather([](const SeedOutcome& s) { return s.fgt; }));
    mo.bwt = aggregate_of(gather([](const SeedOutcome& s) { return s.bwt; }));
    mo.delta_p5 = aggregate_of(gather([](const SeedOutcome& s) { return s.probe.delta_p5; }));
    mo.cctx = aggregate_of(gather([](const SeedOutcome& s) { return s.probe.cctx_proxy; }));
}

namespace {

nlohmann::json probe_to_json(const diag::ProbeReport& p) {
    nlohmann::json j;
    j["normal_acc"] = p.normal_acc;
    if (p.p5_acc) j["p5_acc"] = *p.p5_acc;
    if (p.p5b_acc) j["p5b_acc"] = *p.p5b_acc;
    if (p.p6_acc) j["p6_acc"] = *p.p6_acc;
    if (p.p7_acc) j["p7_acc"] = *p.p7_acc;
    j["delta_p5"] = p.delta_p5;
    j["cctx_proxy"] = p.cctx_proxy;
    if (p.effective_rank) j["effective_rank"] = *p.effective_rank;
    j["classification"] = diag::to_string(p.classification);
    return j;
}

diag::ProbeReport probe_from_json(const nlohmann::json& j) {
    diag::ProbeReport p;
    p.normal_acc = j.at("normal_acc").get<double>();
    if (j.contains("p5_acc")) p.p5_acc = j["p5_acc"].get<double>();
    if (j.contains("p5b_acc")) p.p5b_acc = j["p5b_acc"].get<double>();
    if (j.contains("p6_acc")) p.p6_acc = j["p6_acc"].get<double>();
    if (j.contains("p7_acc")) p.p7_acc = j["p7_acc"].get<double>();
    p.delta_p5 = j.at("delta_p5").get<double>();
    p.cctx_proxy = j.at("cctx_proxy").get<double>();
    if (j.contains("effective_rank")) p.effective_rank = j["effective_rank"].get<double>();
    const std::string cls = j.at("classification").get<std::string>();
    p.classification = cls == "theta0_memorizer" ? diag::ProbeClass::Theta0Memorizer
                       : cls == "context_dependent" ? diag::ProbeClass::ContextDependent
                                                    : diag::ProbeClass::Degenerate;
    return p;
}

nlohmann::json aggregate_to_json(const Aggregate& a) {
    return nlohmann::json{{"mean", a.mean}, {"std", a.stddev}};
}

Aggregate aggregate_from_json(const nlohmann::json& j) {
    return {j.at("mean").get<double>(), j.at("std").get<double>()};
}

}  // namespace

nlohmann::json record_to_json(const ResultRecord& record) {
    nlohmann::json j;
    j["schema_version"] = record.schema_version;
    j["benchmark"] = record.config.benchmark;
    j["mode"] = record.config.mode == Mode::Quick ? "quick" : "full";
    j["non_evidentiary"] = record.config.mode == Mode::Quick;
    j["device"] = record.config.device;
    j["methods"] = record.config.methods;
    j["seeds"] = record.config.seeds;
    j["train_per_class"] = record.config.train_per_class;
    j["test_per_class"] = record.config.test_per_class;
    j["data_dir"] = record.config.data_dir;
    j["output_root"] = record.config.output_root;
    j["command"] = record.config.command_line;
    j["timestamp"] = record.timestamp;
    j["wall_seconds"] = record.wall_seconds;

    nlohmann::json methods = nlohmann::json::array();
    for (const auto& mo : record.methods) {
        nlohmann::json jm;
        jm["method"] = mo.method;
        nlohmann::json seeds = nlohmann::json::array();
        for (const auto& s : mo.seeds) {
            nlohmann::json js;
            js["seed"] = s.seed;
            js["failed"] = s.failed;
            if (s.failed) {
                js["error"] = s.error;
            } else {
                nlohmann::json rows = nlohmann::json::array();
                for (Eigen::Index r = 0; r < s.acc_matrix.values.rows(); ++r) {
                    nlohmann::json row = nlohmann::json::array();
                    for (Eigen::Index c = 0; c < s.acc_matrix.values.cols(); ++c) {
                        row.push_back(s.acc_matrix.values(r, c));
                    }
                    rows.push_back(row);
                }
                js["acc_matrix"] = rows;
                js["acc"] = s.acc;
                js["fgt"] = s.fgt;
                js["bwt"] = s.bwt;
                js["probe"] = probe_to_json(s.probe);
                if (s.effective_rank) js["effective_rank"] = *s.effective_rank;
            }
            js["wall_seconds"] = s.wall_seconds;
            seeds.push_back(js);
        }
        jm["per_seed"] = seeds;
        jm["aggregate"] = {{"acc", aggregate_to_json(mo.acc)},
                           {"fgt", aggregate_to_json(mo.fgt)},
                           {"bwt", aggregate_to_json(mo.bwt)},
                           {"delta_p5", aggregate_to_json(mo.delta_p5)},
                           {"cctx_proxy", aggregate_to_json(mo.cctx)}};
        methods.push_back(jm);
    }
    j["per_method"] = methods;
    return j;
}

ResultRecord record_from_json(const nlohmann::json& j) {
    ResultRecord record;
    record.schema_version = j.at("schema_version").get<int>();
    record.config.benchmark = j.at("benchmark").get<std::string>();
    record.config.mode = j.at("mode").get<std::string>() == "quick" ? Mode::Quick : Mode::Full;
    record.config.device = j.at("device").get<std::string>();
    record.config.methods = j.at("methods").get<std::vector<std::string>>();
    record.config.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    record.config.train_per_class = j.at("train_per_class").get<int>();
    record.config.test_per_class = j.at("test_per_class").get<int>();
    record.config.data_dir = j.at("data_dir").get<std::string>();
    record.config.output_root = j.at("output_root").get<std::string>();
    record.config.command_line = j.at("command").get<std::string>();
    record.timestamp = j.at("timestamp").get<std::string>();
    record.wall_seconds = j.at("wall_seconds").get<double>();

    for (const auto& jm : j.at("per_method")) {
        MethodOutcome mo;
        mo.method = jm.at("method").get<std::string>();
        for (const auto& js : jm.at("per_seed")) {
            SeedOutcome s;
            s.seed = js.at("seed").get<std::uint64_t>();
            s.failed = js.at("failed").get<bool>();
            if (s.failed) {
                s.error = js.value("error", "");
            } else {
                const auto& rows = js.at("acc_matrix");
                const int K = static_cast<int>(rows.size());
                s.acc_matrix.values.resize(K, K);
                for (int r = 0; r < K; ++r)
                    for (int c = 0; c < K; ++c) s.acc_matrix.values(r, c) = rows[r][c].get<double>();
                s.acc = js.at("acc").get<double>();
                s.fgt = js.at("fgt").get<double>();
                s.bwt = js.at("bwt").get<double>();
                s.probe = probe_from_json(js.at("probe"));
                if (js.contains("effective_rank"))
                    s.effective_rank = js["effective_rank"].get<double>();
            }
            s.wall_seconds = js.at("wall_seconds").get<double>();
            mo.seeds.push_back(std::move(s));
        }
        const auto& ja = jm.at("aggregate");
        mo.acc = aggregate_from_json(ja.at("acc"));
        mo.fgt = aggregate_from_json(ja.at("fgt"));
        mo.bwt = aggregate_from_json(ja.at("bwt"));
        mo.delta_p5 = aggregate_from_json(ja.at("delta_p5"));
        mo.cctx = aggregate_from_json(ja.at("cctx_proxy"));
        record.methods.push_back(std::move(mo));
    }
    return record;
}

std::string summary_table(const ResultRecord& record) {
    std::ostringstream out;
    out << "\n== " << record.config.benchmark << " ("
        << (record.config.mode == Mode::Quick ? "quick" : "full") << " mode, "
        << record.config.seeds.size() << " seed" << (record.config.seeds.size() == 1 ? "" : "s")
        << ") ==\n";
    if (record.config.mode == Mode::Quick) {
        out << "!! QUICK MODE: reduced budgets, results are non-evidentiary !!\n";
    }
    char line[256];
    std::snprintf(line, sizeof(line), "%-18s %16s %16s %14s %14s\n", "method", "ACC (%)",
                  "Fgt (%)", "P5 delta (pp)", "C_ctx proxy");
    out << line;
    for (const auto& mo : record.methods) {
        std::snprintf(line, sizeof(line), "%-18s %7.1f +- %5.1f %7.1f +- %5.1f %8.1f %14.3f\n",
                      mo.method.c_str(), 100.0 * mo.acc.mean, 100.0 * mo.acc.stddev,
                      100.0 * mo.fgt.mean, 100.0 * mo.fgt.stddev, 100.0 * mo.delta_p5.mean,
                      mo.cctx.mean);
        out << line;
    }
    return out.str();
}

std::string summary_csv(const ResultRecord& record) {
    std::ostringstream out;
    out << "method,acc_mean,acc_std,fgt_mean,fgt_std,bwt_mean,bwt_std,delta_p5_mean,delta_p5_std,"
           "cctx_mean,cctx_std,non_evidentiary\n";
    for (const auto& mo : record.methods) {
        out << mo.method << ',' << mo.acc.mean << ',' << mo.acc.stddev << ',' << mo.fgt.mean << ','
            << mo.fgt.stddev << ',' << mo.bwt.mean << ',' << mo.bwt.stddev << ','
            << mo.delta_p5.mean << ',' << mo.delta_p5.stddev << ',' << mo.cctx.mean << ','
            << mo.cctx.stddev << ',' << (record.config.mode == Mode::Quick ? 1 : 0) << "\n";
    }
    return out.str();
}

}  // namespace ccl::harness
