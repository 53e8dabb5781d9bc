#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "robustaug/errors.hpp"

namespace robustaug::cli {

namespace {

constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double to_number(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw FormatError("not a number: '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("not a number: '" + s + "'");
  }
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!(lo < hi)) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

std::string open_svg(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
     << "</text>\n";
  return os.str();
}

void axes(std::ostringstream& os, const Range& xr, const Range& yr, const std::string& xl, const std::string& yl) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  os << "<g stroke=\"black\" fill=\"none\"><line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\""
     << y0 << "\"/><line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\"/></g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    const double px = x0 + f * (x1 - x0), py = y0 - f * (y0 - y1);
    os << "<text x=\"" << fmt(px) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
       << fmt(xr.lo + f * (xr.hi - xr.lo)) << "</text>\n";
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << fmt(py + 4) << "\" text-anchor=\"end\">"
       << fmt(yr.lo + f * (yr.hi - yr.lo)) << "</text>\n";
  }
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << escape(xl)
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (y0 + y1) / 2 << ")\">" << escape(yl) << "</text>\n";
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw FormatError("CSV has no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<double> CsvTable::numbers(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(to_number(r.at(c)));
  return out;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!have_header && line[0] == '#') {
      t.comments.push_back(line);
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
    } else {
      if (cells.size() != t.header.size()) throw FormatError("CSV row width differs from the header: " + line);
      t.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw FormatError("CSV has no header row");
  return t;
}

std::string line_chart(const CsvTable& t, const std::string& title, const std::string& x_col,
                       const std::vector<std::string>& y_cols, const std::string& group_col) {
  const std::size_t xc = t.column(x_col);
  std::vector<std::size_t> ycs;
  for (const auto& y : y_cols) ycs.push_back(t.column(y));
  const std::size_t gc = group_col.empty() ? 0 : t.column(group_col);

  // Series keyed by (group, y column) in first-appearance order.
  std::vector<std::pair<std::string, std::size_t>> keys;
  std::map<std::pair<std::string, std::size_t>, std::vector<std::size_t>> rows_of;
  Range xr, yr;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string g = group_col.empty() ? "" : row[gc];
    xr.add(to_number(row[xc]));
    for (std::size_t k = 0; k < ycs.size(); ++k) {
      if (row[ycs[k]].empty()) continue;
      yr.add(to_number(row[ycs[k]]));
      const auto key = std::make_pair(g, k);
      if (!rows_of.count(key)) keys.push_back(key);
      rows_of[key].push_back(r);
    }
  }
  xr.pad();
  yr.pad();
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  auto px = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
  auto py = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

  std::ostringstream os;
  os << open_svg(title);
  axes(os, xr, yr, x_col, y_cols.size() == 1 ? y_cols.front() : "value");
  for (std::size_t s = 0; s < keys.size(); ++s) {
    const auto& [g, k] = keys[s];
    const std::string label = (g.empty() ? "" : g + " ") + y_cols[k];
    const char* color = kPalette[s % std::size(kPalette)];
    os << "<g class=\"series\" data-series=\"" << escape(label) << "\" stroke=\"" << color << "\" fill=\"" << color
       << "\">\n<polyline fill=\"none\" points=\"";
    for (const std::size_t r : rows_of[keys[s]]) {
      os << fmt(px(to_number(t.rows[r][xc]))) << ',' << fmt(py(to_number(t.rows[r][ycs[k]]))) << ' ';
    }
    os << "\"/>\n";
    for (const std::size_t r : rows_of[keys[s]]) {
      const auto& row = t.rows[r];
      os << "<circle r=\"2.5\" cx=\"" << fmt(px(to_number(row[xc]))) << "\" cy=\"" << fmt(py(to_number(row[ycs[k]])))
         << "\" data-x=\"" << row[xc] << "\" data-y=\"" << row[ycs[k]] << "\"/>\n";
    }
    os << "</g>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(s);
    os << "<rect x=\"" << x1 + 10 << "\" y=\"" << fmt(ly - 8) << "\" width=\"10\" height=\"10\" fill=\"" << color
       << "\"/><text x=\"" << x1 + 24 << "\" y=\"" << fmt(ly + 1) << "\">" << escape(label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string heatmap(const CsvTable& t, const std::string& title, const std::string& x_col, const std::string& y_col,
                    const std::string& value_col) {
  const std::size_t xc = t.column(x_col), yc = t.column(y_col), vc = t.column(value_col);
  std::vector<double> xs, ys;
  Range vr;
  for (const auto& row : t.rows) {
    xs.push_back(to_number(row[xc]));
    ys.push_back(to_number(row[yc]));
    vr.add(to_number(row[vc]));
  }
  vr.pad();
  std::vector<double> ux = xs, uy = ys;
  std::sort(ux.begin(), ux.end());
  ux.erase(std::unique(ux.begin(), ux.end()), ux.end());
  std::sort(uy.begin(), uy.end());
  uy.erase(std::unique(uy.begin(), uy.end()), uy.end());
  Range xr, yr;
  for (const double v : ux) xr.add(v);
  for (const double v : uy) yr.add(v);
  xr.pad();
  yr.pad();

  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const double cw = (x1 - x0) / static_cast<double>(ux.size()), ch = (y0 - y1) / static_cast<double>(uy.size());
  auto col_of = [&](double v) { return static_cast<double>(std::lower_bound(ux.begin(), ux.end(), v) - ux.begin()); };
  auto row_of = [&](double v) { return static_cast<double>(std::lower_bound(uy.begin(), uy.end(), v) - uy.begin()); };
  // Diverging scale centred on zero margin: red below, blue above.
  const double span = std::max(std::abs(vr.lo), std::abs(vr.hi));
  auto color = [&](double v) {
    const double f = span > 0.0 ? std::clamp(v / span, -1.0, 1.0) : 0.0;
    const int other = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(f))));
    char buf[16];
    if (f < 0.0) {
      std::snprintf(buf, sizeof buf, "#ff%02x%02x", other, other);
    } else {
      std::snprintf(buf, sizeof buf, "#%02x%02xff", other, other);
    }
    return std::string(buf);
  };

  std::ostringstream os;
  os << open_svg(title);
  os << "<g class=\"cells\">\n";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const double cx = x0 + col_of(xs[r]) * cw, cy = y0 - (row_of(ys[r]) + 1.0) * ch;
    os << "<rect x=\"" << fmt(cx) << "\" y=\"" << fmt(cy) << "\" width=\"" << fmt(cw) << "\" height=\"" << fmt(ch)
       << "\" fill=\"" << color(to_number(row[vc])) << "\" data-x=\"" << row[xc] << "\" data-y=\"" << row[yc]
       << "\" data-value=\"" << row[vc] << "\"/>\n";
  }
  os << "</g>\n";
  auto px = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * (x1 - x0 - cw) + cw / 2; };
  auto py = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1 - ch) - ch / 2; };
  os << "<polygon class=\"ball\" fill=\"none\" stroke=\"black\" stroke-dasharray=\"4 3\" points=\"" << fmt(px(1)) << ','
     << fmt(py(0)) << ' ' << fmt(px(0)) << ',' << fmt(py(1)) << ' ' << fmt(px(-1)) << ',' << fmt(py(0)) << ' '
     << fmt(px(0)) << ',' << fmt(py(-1)) << "\"/>\n";
  axes(os, xr, yr, x_col, y_col);
  os << "<text x=\"" << x1 + 10 << "\" y=\"" << kTop + 10 << "\">" << escape(value_col) << "</text>\n";
  os << "<text x=\"" << x1 + 10 << "\" y=\"" << kTop + 28 << "\">min " << fmt(vr.lo) << "</text>\n";
  os << "<text x=\"" << x1 + 10 << "\" y=\"" << kTop + 46 << "\">max " << fmt(vr.hi) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string bar_strips(const CsvTable& t, const std::string& title, const std::string& order_col,
                       const std::vector<std::string>& snapshot_cols) {
  const std::size_t oc = t.column(order_col);
  std::vector<std::size_t> scs;
  for (const auto& s : snapshot_cols) scs.push_back(t.column(s));
  const double x0 = kLeft, x1 = kWidth - kRight;
  const double n = static_cast<double>(std::max<std::size_t>(1, t.rows.size()));
  const double cw = (x1 - x0) / n;
  const double sh = std::min(60.0, (kHeight - kTop - kBottom) / static_cast<double>(std::max<std::size_t>(1, scs.size())));
  std::ostringstream os;
  os << open_svg(title);
  for (std::size_t s = 0; s < scs.size(); ++s) {
    const double y = kTop + static_cast<double>(s) * sh;
    std::size_t correct = 0;
    os << "<g class=\"strip\" data-snapshot=\"" << escape(snapshot_cols[s]) << "\">\n";
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& row = t.rows[r];
      const bool ok = row[scs[s]] == "1";
      correct += ok ? 1 : 0;
      os << "<rect x=\"" << fmt(x0 + static_cast<double>(r) * cw) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(cw)
         << "\" height=\"" << fmt(sh * 0.8) << "\" fill=\"" << (ok ? "#c6dbef" : "#08306b") << "\" data-index=\""
         << row[oc] << "\" data-correct=\"" << row[scs[s]] << "\"/>\n";
    }
    os << "</g>\n<text x=\"" << x1 + 10 << "\" y=\"" << fmt(y + sh * 0.5) << "\">" << escape(snapshot_cols[s]) << " ("
       << correct << ")</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace robustaug::cli
