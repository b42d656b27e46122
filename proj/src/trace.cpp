#include "mrq/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mrq {

bool Trace::all_finite() const {
    for (const auto& row : rows)
        for (double v : row)
            if (!std::isfinite(v)) return false;
    return true;
}

std::size_t Trace::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return i;
    throw ConfigError("Trace: no column named '" + name + "'");
}

void write_csv(const std::string& path, const Trace& trace) {
    std::ofstream os(path);
    if (!os) throw DataError("write_csv: cannot open " + path);
    for (const auto& note : trace.notes) os << "# " << note << "\n";
    for (std::size_t i = 0; i < trace.columns.size(); ++i)
        os << (i ? "," : "") << trace.columns[i];
    os << "\n";
    os << std::setprecision(17);
    for (const auto& row : trace.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << "\n";
    }
    if (!os) throw DataError("write_csv: write failed for " + path);
}

Trace read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("read_csv: cannot open " + path);
    Trace trace;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::size_t start = line.find_first_not_of("# ");
            trace.notes.push_back(start == std::string::npos ? "" : line.substr(start));
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        if (!header_seen) {
            while (std::getline(ss, cell, ',')) trace.columns.push_back(cell);
            header_seen = true;
            continue;
        }
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError("read_csv: non-numeric cell '" + cell + "' in " + path);
            }
        }
        if (row.size() != trace.columns.size()) throw DataError("read_csv: ragged row in " + path);
        trace.rows.push_back(std::move(row));
    }
    if (!header_seen) throw DataError("read_csv: missing header in " + path);
    return trace;
}

void write_svg_plot(const std::string& path, const Trace& trace, const std::string& title) {
    if (trace.columns.size() < 2 || trace.rows.empty())
        throw ConfigError("write_svg_plot: need an x column, one series and data");
    const double width = 860, height = 480;
    const double ml = 70, mr = 160, mt = 40, mb = 45;
    const double pw = width - ml - mr, ph = height - mt - mb;

    double xmin = trace.rows.front()[0], xmax = xmin;
    double ymin = 0.0, ymax = 0.0;
    bool y_seen = false;
    for (const auto& row : trace.rows) {
        xmin = std::min(xmin, row[0]);
        xmax = std::max(xmax, row[0]);
        for (std::size_t c = 1; c < row.size(); ++c) {
            if (!std::isfinite(row[c])) continue;
            if (!y_seen) {
                ymin = ymax = row[c];
                y_seen = true;
            }
            ymin = std::min(ymin, row[c]);
            ymax = std::max(ymax, row[c]);
        }
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (!y_seen || ymax == ymin) ymax = ymin + 1.0;

    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    std::ofstream os(path);
    if (!os) throw DataError("write_svg_plot: cannot open " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"16\" "
       << "font-family=\"sans-serif\">" << title << "</text>\n";
    // axes + gridlines with labels
    for (int g = 0; g <= 4; ++g) {
        double fy = ymin + (ymax - ymin) * g / 4.0;
        double py = sy(fy);
        os << "<line x1=\"" << ml << "\" y1=\"" << py << "\" x2=\"" << ml + pw << "\" y2=\"" << py
           << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << py + 4
           << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << std::setprecision(4)
           << fy << "</text>\n";
        double fx = xmin + (xmax - xmin) * g / 4.0;
        double px = sx(fx);
        os << "<text x=\"" << px << "\" y=\"" << mt + ph + 18
           << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fx << "</text>\n";
    }
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#333333\"/>\n";
    for (std::size_t c = 1; c < trace.columns.size(); ++c) {
        const char* color = palette[(c - 1) % 8];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& row : trace.rows) {
            if (!std::isfinite(row[c])) continue;
            os << sx(row[0]) << "," << sy(row[c]) << " ";
        }
        os << "\"/>\n";
        double ly = mt + 16 + static_cast<double>(c - 1) * 18;
        os << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 34 << "\" y2=\""
           << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly + 4
           << "\" font-size=\"12\" font-family=\"sans-serif\">" << trace.columns[c] << "</text>\n";
    }
    os << "</svg>\n";
    if (!os) throw DataError("write_svg_plot: write failed for " + path);
}

}  // namespace mrq
