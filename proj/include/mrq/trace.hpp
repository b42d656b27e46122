// Named-column numeric table for loss traces and reports, with CSV IO.
#pragma once

#include <string>
#include <vector>

#include "mrq/common.hpp"

namespace mrq {

struct Trace {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> notes;  // emitted as leading '#' comment lines

    void add_row(std::vector<double> row) {
        if (row.size() != columns.size()) throw ConfigError("Trace::add_row: width mismatch");
        rows.push_back(std::move(row));
    }

    bool all_finite() const;
    std::size_t column_index(const std::string& name) const;
};

void write_csv(const std::string& path, const Trace& trace);
Trace read_csv(const std::string& path);

// Static SVG line plot of every column (after the first, which is the x axis).
void write_svg_plot(const std::string& path, const Trace& trace, const std::string& title);

}  // namespace mrq
