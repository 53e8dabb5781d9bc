#pragma once

#include <string>
#include <vector>

namespace robustaug::cli {

// CSV with leading "#" comment lines and one header row. Cells are kept as
// the exact strings that were written.
struct CsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  std::vector<double> numbers(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);

// SVG renderers. Every plotted value is also stored verbatim as a data-*
// attribute so the figure can be checked against its CSV. All of them are
// pure functions of the table.

// One line per distinct value of `group_col` (or a single line if empty).
std::string line_chart(const CsvTable& t, const std::string& title, const std::string& x_col,
                       const std::vector<std::string>& y_cols, const std::string& group_col = "");
// Heatmap of value_col over (x_col, y_col) with the unit diamond |x|+|y|<=1.
std::string heatmap(const CsvTable& t, const std::string& title, const std::string& x_col, const std::string& y_col,
                    const std::string& value_col);
// One strip per snapshot column, examples in `order_col` order; a cell is
// dark where the prediction is wrong.
std::string bar_strips(const CsvTable& t, const std::string& title, const std::string& order_col,
                       const std::vector<std::string>& snapshot_cols);

}  // namespace robustaug::cli
