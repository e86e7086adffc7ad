#include "dasd/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dasd/errors.hpp"

namespace dasd {

namespace {

struct Series {
    const char* label;
    const char* color;
    std::vector<double> values;
};

std::string polyline(const Series& s, double x0, double y0, double w, double h, double vmin,
                     double vmax, std::size_t n) {
    std::ostringstream out;
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        double x = x0 + w * (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5);
        double t = vmax > vmin ? (s.values[i] - vmin) / (vmax - vmin) : 0.5;
        double y = y0 + h * (1.0 - t);
        out << x << "," << y << " ";
    }
    out << "\"/>";
    return out.str();
}

}  // namespace

std::string render_loss_curve_svg(const std::vector<StepRecord>& trace) {
    const double width = 720, height = 360, margin = 45;
    std::vector<Series> series = {
        {"total", "#1f77b4", {}},        {"cross_lingual", "#d62728", {}},
        {"semantic_consistency", "#2ca02c", {}}, {"adversarial", "#9467bd", {}},
        {"discriminator", "#8c564b", {}}, {"cross_modal", "#e377c2", {}},
    };
    for (const auto& rec : trace) {
        series[0].values.push_back(rec.total);
        series[1].values.push_back(rec.cross_lingual);
        series[2].values.push_back(rec.semantic_consistency);
        series[3].values.push_back(rec.adversarial);
        series[4].values.push_back(rec.discriminator);
        series[5].values.push_back(rec.cross_modal);
    }
    double vmin = 0, vmax = 1;
    bool first = true;
    for (const auto& s : series) {
        for (double v : s.values) {
            if (first) {
                vmin = vmax = v;
                first = false;
            }
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
    }
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << margin << "\" y=\"20\" font-family=\"monospace\" font-size=\"13\">"
        << "training losses (" << trace.size() << " steps, range [" << vmin << ", " << vmax
        << "])</text>\n";
    double x0 = margin, y0 = margin, w = width - 2 * margin, h = height - 2 * margin;
    svg << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << w << "\" height=\"" << h
        << "\" fill=\"none\" stroke=\"#999\"/>\n";
    double legend_y = y0 + 14;
    for (const auto& s : series) {
        if (s.values.empty()) continue;
        svg << polyline(s, x0, y0, w, h, vmin, vmax, trace.size()) << "\n";
        svg << "<text x=\"" << x0 + w - 150 << "\" y=\"" << legend_y << "\" fill=\"" << s.color
            << "\" font-family=\"monospace\" font-size=\"11\">" << s.label << "</text>\n";
        legend_y += 13;
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string to_csv(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream out;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out << ",";
        out << header[i];
    }
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ",";
            out << row[i];
        }
        out << "\n";
    }
    return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << content;
    if (!out) throw IoError("failed writing " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

}  // namespace dasd
