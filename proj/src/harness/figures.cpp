#include "ccl/harness/figures.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace ccl::harness {

namespace {

// Small SVG builder; enough for scatter plots, heatmaps and bar charts.
class Svg {
public:
    Svg(int w, int h) : w_(w), h_(h) {
        buf_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
             << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
             << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& stroke = "none") {
        buf_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
             << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
    }

    void circle(double cx, double cy, double r, const std::string& fill) {
        buf_ << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r << "\" fill=\"" << fill
             << "\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke = "#444") {
        buf_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
             << "\" stroke=\"" << stroke << "\" stroke-width=\"1\"/>\n";
    }

    void text(double x, double y, const std::string& s, int size = 11,
              const std::string& anchor = "start", const std::string& fill = "#222") {
        buf_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
             << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\" fill=\"" << fill
             << "\">" << s << "</text>\n";
    }

    void save(const fs::path& path) {
        std::ofstream out(path);
        out << buf_.str() << "</svg>\n";
    }

private:
    int w_, h_;
    std::ostringstream buf_;
};

// Blue-to-yellow ramp for accuracy in [0,1].
std::string heat_color(double v) {
    v = std::clamp(v, 0.0, 1.0);
    const int r = static_cast<int>(30 + 225 * v);
    const int g = static_cast<int>(30 + 190 * v);
    const int b = static_cast<int>(110 - 60 * v + 60 * (1 - v));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, std::min(255, b));
    return buf;
}

const char* kPalette[] = {"#4363d8", "#e6194b", "#3cb44b", "#f58231", "#911eb4", "#46f0f0",
                          "#f032e6", "#808000", "#000075", "#9a6324", "#469990"};

void phase_plot(const ResultRecord& record, const fs::path& dir) {
    const int W = 560, H = 420, ML = 70, MB = 50, MT = 30, MR = 20;
    Svg svg(W, H);
    const double px0 = ML, px1 = W - MR, py0 = H - MB, py1 = MT;
    auto X = [&](double cctx) { return px0 + cctx * (px1 - px0); };
    auto Y = [&](double fgt) { return py0 - fgt * (py0 - py1); };
    svg.line(px0, py0, px1, py0);
    svg.line(px0, py0, px0, py1);
    for (int i = 0; i <= 5; ++i) {
        const double v = i / 5.0;
        svg.text(X(v), py0 + 16, std::to_string(i * 20) + "%", 10, "middle");
        svg.text(px0 - 8, Y(v) + 4, std::to_string(i * 20) + "%", 10, "end");
        svg.line(px0, Y(v), px1, Y(v), "#eee");
    }
    svg.text((px0 + px1) / 2, H - 12, "context capacity proxy (x100)", 12, "middle");
    svg.text(14, (py0 + py1) / 2, "forgetting", 12, "middle");
    int ci = 0;
    for (const auto& mo : record.methods) {
        svg.circle(X(mo.cctx.mean), Y(std::max(0.0, mo.fgt.mean)), 6,
                   kPalette[ci % std::size(kPalette)]);
        svg.text(X(mo.cctx.mean) + 8, Y(std::max(0.0, mo.fgt.mean)) + 4, mo.method, 10);
        ++ci;
    }
    svg.text((px0 + px1) / 2, 18, "forgetting vs context capacity proxy", 13, "middle");
    svg.save(dir / "phase_transition.svg");
}

void matrix_heatmaps(const ResultRecord& record, const fs::path& dir) {
    for (const auto& mo : record.methods) {
        const SeedOutcome* first = nullptr;
        for (const auto& s : mo.seeds) {
            if (!s.failed) {
                first = &s;
                break;
            }
        }
        if (!first) continue;
        const auto& m = first->acc_matrix.values;
        const int K = static_cast<int>(m.rows());
        const int cell = 52, ML = 80, MT = 50;
        Svg svg(ML + K * cell + 20, MT + K * cell + 30);
        svg.text(ML + K * cell / 2.0, 20, mo.method + " accuracy matrix (seed " +
                                              std::to_string(first->seed) + ")",
                 13, "middle");
        for (int i = 0; i < K; ++i) {
            svg.text(ML - 8, MT + i * cell + cell / 2.0 + 4, "after T" + std::to_string(i + 1), 10,
                     "end");
            svg.text(ML + i * cell + cell / 2.0, MT - 8, "T" + std::to_string(i + 1), 10, "middle");
            for (int j = 0; j < K; ++j) {
                svg.rect(ML + j * cell, MT + i * cell, cell - 2, cell - 2, heat_color(m(i, j)));
                char lbl[16];
                std::snprintf(lbl, sizeof(lbl), "%.0f", 100.0 * m(i, j));
                svg.text(ML + j * cell + cell / 2.0 - 1, MT + i * cell + cell / 2.0 + 4, lbl, 10,
                         "middle", m(i, j) > 0.5 ? "#222" : "#eee");
            }
        }
        svg.save(dir / ("acc_matrix_" + mo.method + ".svg"));
    }
}

void p5_bar_chart(const ResultRecord& record, const fs::path& dir) {
    const int n = static_cast<int>(record.methods.size());
    const int group_w = 84, W = 90 + n * group_w, H = 360, MB = 90, MT = 40;
    Svg svg(W, H);
    const double py0 = H - MB, py1 = MT;
    auto Y = [&](double acc) { return py0 - acc * (py0 - py1); };
    svg.line(60, py0, W - 10, py0);
    for (int i = 0; i <= 4; ++i) {
        svg.text(52, Y(i / 4.0) + 4, std::to_string(i * 25) + "%", 10, "end");
        svg.line(60, Y(i / 4.0), W - 10, Y(i / 4.0), "#eee");
    }
    svg.text(W / 2.0, 20, "normal vs wrong-context accuracy", 13, "middle");
    for (int i = 0; i < n; ++i) {
        const auto& mo = record.methods[i];
        double normal = 0, p5 = 0;
        int count = 0;
        for (const auto& s : mo.seeds) {
            if (s.failed) continue;
            normal += s.probe.normal_acc;
            p5 += s.probe.p5_acc.value_or(s.probe.normal_acc);
            ++count;
        }
        if (count == 0) continue;
        normal /= count;
        p5 /= count;
        const double x = 70 + i * group_w;
        svg.rect(x, Y(normal), 28, py0 - Y(normal), "#4363d8");
        svg.rect(x + 32, Y(p5), 28, py0 - Y(p5), "#e6194b");
        svg.text(x + 30, H - MB + 14, mo.method, 9, "middle");
    }
    svg.rect(70, H - 40, 12, 12, "#4363d8");
    svg.text(86, H - 30, "normal context", 10);
    svg.rect(200, H - 40, 12, 12, "#e6194b");
    svg.text(216, H - 30, "wrong context (P5)", 10);
    svg.save(dir / "p5_bars.svg");
}

}  // namespace

void emit_plots(const ResultRecord& record, const std::string& dir) {
    require(!record.methods.empty(), "emit_plots: record has no methods");
    fs::create_directories(dir);
    phase_plot(record, dir);
    matrix_heatmaps(record, dir);
    p5_bar_chart(record, dir);
}

}  // namespace ccl::harness
