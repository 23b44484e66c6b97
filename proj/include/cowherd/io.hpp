#pragma once

#include "cowherd/dists.hpp"
#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/smooth.hpp"
#include "cowherd/sweights.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace cowherd {

using json = nlohmann::json;

//! Shortest decimal form that reads back to the same double.
inline std::string format_double(double x)
{
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, r.ptr};
}

inline double parse_double(std::string_view s, const std::string& where)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  double x = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ValidationError(where + ": cannot parse number '" + std::string(s) + "'");
  return x;
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view chomp(std::string_view s)
{
  if (!s.empty() && s.back() == '\r')
    s.remove_suffix(1);
  return s;
}

inline std::ofstream open_out(const std::filesystem::path& p)
{
  if (p.has_parent_path())
    std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f)
    throw ValidationError("cannot open '" + p.string() + "' for writing");
  return f;
}

inline std::ifstream open_in(const std::filesystem::path& p)
{
  std::ifstream f(p, std::ios::binary);
  if (!f)
    throw ValidationError("cannot open '" + p.string() + "'");
  return f;
}

} // namespace detail

// ---- samples: header m,t[,s]

inline void write_sample_csv(std::ostream& os, const Sample& s)
{
  s.validate();
  const bool lab = s.has_labels();
  os << (lab ? "m,t,s\n" : "m,t\n");
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << format_double(s.m[i]) << ',' << format_double(s.t[i]);
    if (lab)
      os << ',' << s.label[i];
    os << '\n';
  }
}

inline Sample read_sample_csv(std::istream& is, const std::string& name = "sample")
{
  std::string line;
  if (!std::getline(is, line))
    throw ValidationError(name + ": empty file");
  const auto head = detail::chomp(line);
  bool lab = false;
  if (head == "m,t,s")
    lab = true;
  else if (head != "m,t")
    throw ValidationError(name + ": header must be 'm,t' or 'm,t,s'");
  Sample s;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    const auto body = detail::chomp(line);
    if (body.empty())
      continue;
    const auto f = detail::split_csv(body);
    const std::string where = name + " line " + std::to_string(row);
    if (f.size() != (lab ? 3u : 2u))
      throw ValidationError(where + ": wrong number of fields");
    s.m.push_back(parse_double(f[0], where));
    s.t.push_back(parse_double(f[1], where));
    if (!std::isfinite(s.m.back()) || !std::isfinite(s.t.back()))
      throw ValidationError(where + ": non-finite value");
    if (lab) {
      const double v = parse_double(f[2], where);
      if (v != std::floor(v))
        throw ValidationError(where + ": label must be an integer");
      s.label.push_back(static_cast<int>(v));
    }
  }
  return s;
}

inline void write_sample_csv(const std::filesystem::path& p, const Sample& s)
{
  auto f = detail::open_out(p);
  write_sample_csv(f, s);
}

inline Sample read_sample_csv(const std::filesystem::path& p)
{
  auto f = detail::open_in(p);
  return read_sample_csv(f, p.string());
}

// ---- grid functions: JSON {lo, hi, values} and CSV x,value

inline json grid_to_json(const GridDensity& g)
{
  return json{{"lo", g.support().lo}, {"hi", g.support().hi}, {"values", g.values()}};
}

inline GridDensity grid_from_json(const json& j, bool density = false)
{
  if (!j.is_object() || !j.contains("lo") || !j.contains("hi") || !j.contains("values"))
    throw ValidationError("grid function JSON needs lo, hi and values");
  try {
    return GridDensity(Support(j.at("lo").get<double>(), j.at("hi").get<double>()),
                       j.at("values").get<std::vector<double>>(), density);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("grid function JSON: ") + e.what());
  }
}

inline void write_grid_csv(std::ostream& os, const GridDensity& g)
{
  os << "x,value\n";
  for (std::size_t i = 0; i < g.size(); ++i)
    os << format_double(g.midpoint(i)) << ',' << format_double(g[i]) << '\n';
}

inline void write_json(const std::filesystem::path& p, const json& j)
{
  auto f = detail::open_out(p);
  f << j.dump(2) << '\n';
}

inline json read_json(const std::filesystem::path& p)
{
  auto f = detail::open_in(p);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

//! Writes name.json and name.csv side by side.
inline void write_grid(const std::filesystem::path& stem, const GridDensity& g)
{
  write_json(std::filesystem::path(stem).replace_extension(".json"), grid_to_json(g));
  auto f = detail::open_out(std::filesystem::path(stem).replace_extension(".csv"));
  write_grid_csv(f, g);
}

inline json matrix_to_json(const Eigen::MatrixXd& a)
{
  json rows = json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      r.push_back(a(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- Hist2D: header row of t edges, first column of m edges
//
//   ,t0,t1,...,tK
//   m0,c00,...,c0(K-1),
//   ...
//   mJ,,...,,
//
// Count (i, j) sits in the row of its lower m edge and the column of its
// lower t edge.

inline void write_hist_csv(std::ostream& os, const Hist2D& h)
{
  const auto nm = h.counts.rows(), nt = h.counts.cols();
  for (const double e : h.edges_t)
    os << ',' << format_double(e);
  os << '\n';
  for (Eigen::Index i = 0; i <= nm; ++i) {
    os << format_double(h.edges_m[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < nt; ++j) {
      os << ',';
      if (i < nm)
        os << format_double(h.counts(i, j));
    }
    os << ",\n";
  }
}

inline Hist2D read_hist_csv(std::istream& is, const std::string& name = "histogram")
{
  std::string line;
  if (!std::getline(is, line))
    throw ValidationError(name + ": empty file");
  auto head = detail::split_csv(detail::chomp(line));
  if (head.size() < 3 || !head.front().empty())
    throw ValidationError(name + ": header must be an empty cell followed by at least 2 t edges");
  Hist2D h;
  for (std::size_t j = 1; j < head.size(); ++j)
    h.edges_t.push_back(parse_double(head[j], name + " header"));
  const std::size_t nt = h.edges_t.size() - 1;
  std::vector<std::vector<double>> rows;
  std::size_t row = 1;
  bool closed = false;
  while (std::getline(is, line)) {
    ++row;
    const auto body = detail::chomp(line);
    if (body.empty())
      continue;
    const std::string where = name + " line " + std::to_string(row);
    if (closed)
      throw ValidationError(where + ": data after the last m edge");
    const auto f = detail::split_csv(body);
    if (f.size() != nt + 2)
      throw ValidationError(where + ": wrong number of fields");
    h.edges_m.push_back(parse_double(f[0], where));
    if (f[1].empty()) {
      for (std::size_t j = 1; j < f.size(); ++j)
        if (!f[j].empty())
          throw ValidationError(where + ": last row must hold only the final m edge");
      closed = true;
      continue;
    }
    std::vector<double> c(nt);
    for (std::size_t j = 0; j < nt; ++j)
      c[j] = parse_double(f[j + 1], where);
    rows.push_back(std::move(c));
  }
  if (!closed || rows.size() < 2)
    throw ValidationError(name + ": need at least 2 m bins and a closing edge row");
  auto increasing = [](const std::vector<double>& e) {
    for (std::size_t i = 1; i < e.size(); ++i)
      if (!(e[i] > e[i - 1]))
        return false;
    return true;
  };
  if (!increasing(h.edges_m) || !increasing(h.edges_t))
    throw ValidationError(name + ": edges must increase");
  h.counts.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(nt));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < nt; ++j)
      h.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return h;
}

inline void write_hist_csv(const std::filesystem::path& p, const Hist2D& h)
{
  auto f = detail::open_out(p);
  write_hist_csv(f, h);
}

inline Hist2D read_hist_csv(const std::filesystem::path& p)
{
  auto f = detail::open_in(p);
  return read_hist_csv(f, p.string());
}

// ---- n x d matrices: header x1,...,xd

inline void write_matrix_csv(std::ostream& os, const Eigen::MatrixXd& x)
{
  for (Eigen::Index r = 0; r < x.cols(); ++r)
    os << (r ? ",x" : "x") << r + 1;
  os << '\n';
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index r = 0; r < x.cols(); ++r)
      os << (r ? "," : "") << format_double(x(i, r));
    os << '\n';
  }
}

inline Eigen::MatrixXd read_matrix_csv(std::istream& is, const std::string& name = "matrix")
{
  std::string line;
  if (!std::getline(is, line))
    throw ValidationError(name + ": empty file");
  const std::size_t d = detail::split_csv(detail::chomp(line)).size();
  std::vector<double> v;
  std::size_t rows = 0, row = 1;
  while (std::getline(is, line)) {
    ++row;
    const auto body = detail::chomp(line);
    if (body.empty())
      continue;
    const auto f = detail::split_csv(body);
    const std::string where = name + " line " + std::to_string(row);
    if (f.size() != d)
      throw ValidationError(where + ": wrong number of fields");
    for (auto s : f)
      v.push_back(parse_double(s, where));
    ++rows;
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t r = 0; r < d; ++r)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = v[i * d + r];
  return x;
}

inline void write_matrix_csv(const std::filesystem::path& p, const Eigen::MatrixXd& x)
{
  auto f = detail::open_out(p);
  write_matrix_csv(f, x);
}

inline Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& p)
{
  auto f = detail::open_in(p);
  return read_matrix_csv(f, p.string());
}

// ---- densities and bases
//
// A density is either a grid {lo, hi, values} or a family
// {family, a, b, lo, hi}.  A basis is {s, cells, lo, hi, components: [...]}
// with signal components first; family entries are tabulated on the
// basis grid.

inline ParamDensity param_from_json(const json& j)
{
  try {
    const Family fam = family_from_name(j.at("family").get<std::string>());
    const Support sup(j.value("lo", 0.0), j.value("hi", 1.0));
    return ParamDensity(fam, j.value("a", 0.0), j.value("b", 0.0), sup);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("density JSON: ") + e.what());
  }
}

inline json param_to_json(const ParamDensity& d)
{
  return json{{"family", family_name(d.family())},
              {"a", d.param_a()},
              {"b", d.param_b()},
              {"lo", d.support().lo},
              {"hi", d.support().hi}};
}

inline GridDensity density_from_json(const json& j, const Support& grid, std::size_t cells)
{
  if (j.is_object() && j.contains("family"))
    return param_from_json(j).tabulate_on(grid, cells).clipped_normalized();
  auto g = grid_from_json(j, true);
  if (g.support() != grid || g.size() != cells)
    throw ShapeError("grid density does not match the basis grid");
  return g;
}

inline BasisSet basis_from_json(const json& j)
{
  try {
    const auto& comps = j.at("components");
    if (!comps.is_array() || comps.size() < 2)
      throw ValidationError("basis JSON needs at least 2 components");
    const std::size_t s = j.value("s", std::size_t{1});
    if (s < 1 || s >= comps.size())
      throw ValidationError("basis JSON: s must leave at least one background component");
    std::size_t cells = j.value("cells", kDefaultGridSize);
    Support grid(j.value("lo", 0.0), j.value("hi", 1.0));
    std::vector<GridDensity> g;
    for (const auto& c : comps)
      g.push_back(density_from_json(c, grid, cells));
    return BasisSet(std::move(g), s, comps.size() - s);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("basis JSON: ") + e.what());
  }
}

} // namespace cowherd
