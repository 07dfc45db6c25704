#pragma once

// File formats (grid CSV, sample CSV, LGS1/LGI1 tensors), atomic writes,
// SHA-256 digests and standalone SVG line charts.

#include <openssl/evp.h>

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pdegan/datasets.hpp"
#include "pdegan/error.hpp"
#include "pdegan/measure.hpp"

namespace pdegan {

static_assert(std::endian::native == std::endian::little,
              "binary tensor formats assume a little-endian host");

inline std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail("FileNotFound", "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temp file, then renames over the target.
inline void atomic_write(const std::filesystem::path &path, const std::string &bytes) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      fail("IoError", "cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out)
      fail("IoError", "short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    fail("IoError", "cannot rename '" + tmp.string() + "': " + ec.message());
}

inline std::string sha256_hex(const std::string &bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail("IoError", "SHA-256 digest failed");
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i)
    ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return ss.str();
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ','))
    out.push_back(cell);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

inline bool parse_double(std::string s, double &out) {
  s.erase(0, s.find_first_not_of(" \t\r"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  if (s.empty())
    return false;
  std::istringstream ss(s);
  ss.imbue(std::locale::classic());
  ss >> out;
  return !ss.fail() && ss.eof();
}

inline std::vector<std::string> lines(const std::string &text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (!line.empty())
      out.push_back(line);
  }
  return out;
}

template <typename T> void put(std::string &buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T> T get(const std::string &buf, std::size_t &pos) {
  if (pos + sizeof(T) > buf.size())
    fail("InvalidFile", "truncated binary file");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

} // namespace detail

// Header `axis0,...,rho`, one row per grid point in row-major order.
inline std::string grid_to_csv(const GridDensity &g) {
  std::ostringstream os;
  for (std::size_t a = 0; a < g.dim(); ++a)
    os << "axis" << a << ',';
  os << "rho\n";
  os.precision(17);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto x = g.point(i);
    for (std::size_t a = 0; a < g.dim(); ++a)
      os << x[a] << ',';
    os << g.rho()[static_cast<Eigen::Index>(i)] << '\n';
  }
  return os.str();
}

inline GridDensity grid_from_csv(const std::string &text) {
  const auto rows = detail::lines(text);
  if (rows.size() < 2)
    fail("InvalidFile", "grid CSV needs a header and data rows");
  const auto header = detail::split_csv(rows[0]);
  if (header.size() < 2 || header.back() != "rho")
    fail("InvalidFile", "grid CSV header must be axis0,...,rho");
  const std::size_t d = header.size() - 1;
  if (d > kMaxGridDim)
    fail("DimensionTooHigh", "grid CSV has more than 2 axes");
  std::vector<std::vector<double>> coords(d);
  Eigen::VectorXd rho(static_cast<Eigen::Index>(rows.size() - 1));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto cells = detail::split_csv(rows[r]);
    if (cells.size() != d + 1)
      fail("InvalidFile", "grid CSV row " + std::to_string(r + 1) + " has the wrong width");
    for (std::size_t a = 0; a <= d; ++a) {
      double v = 0.0;
      if (!detail::parse_double(cells[a], v))
        fail("InvalidFile", "grid CSV row " + std::to_string(r + 1) + ": bad number");
      if (a < d)
        coords[a].push_back(v);
      else
        rho[static_cast<Eigen::Index>(r - 1)] = v;
    }
  }
  std::vector<Interval> dom(d);
  std::vector<std::size_t> shape(d);
  for (std::size_t a = 0; a < d; ++a) {
    auto u = coords[a];
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    shape[a] = u.size();
    dom[a] = {u.front(), u.back()};
  }
  std::size_t expected = 1;
  for (auto s : shape)
    expected *= s;
  if (expected != static_cast<std::size_t>(rho.size()))
    fail("InvalidFile", "grid CSV points do not form a full tensor grid");
  const auto g = GridDensity::from_values(dom, shape, rho);
  // Row-major order and uniform spacing.
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto x = g.point(i);
    for (std::size_t a = 0; a < d; ++a)
      if (std::abs(x[a] - coords[a][i]) > 1e-9 * std::max(1.0, dom[a].length()))
        fail("InvalidFile", "grid CSV is not a uniform row-major grid");
  }
  return g;
}

// One point per row; a non-numeric first row is treated as a header.
inline SampleSet samples_from_csv(const std::string &text) {
  const auto rows = detail::lines(text);
  std::vector<std::vector<double>> pts;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto cells = detail::split_csv(rows[r]);
    std::vector<double> p(cells.size());
    bool ok = true;
    for (std::size_t a = 0; a < cells.size() && ok; ++a)
      ok = detail::parse_double(cells[a], p[a]);
    if (!ok) {
      if (r == 0)
        continue;
      fail("InvalidFile", "sample CSV row " + std::to_string(r + 1) + ": bad number");
    }
    if (!pts.empty() && p.size() != pts.front().size())
      fail("InvalidFile", "sample CSV row " + std::to_string(r + 1) + " has the wrong width");
    pts.push_back(std::move(p));
  }
  if (pts.empty())
    fail("InvalidFile", "sample CSV has no data rows");
  SampleSet s;
  s.points.resize(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(pts[0].size()));
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t a = 0; a < pts[0].size(); ++a)
      s.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = pts[i][a];
  return s;
}

inline std::string samples_to_csv(const SampleSet &s) {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index i = 0; i < s.points.rows(); ++i)
    for (Eigen::Index a = 0; a < s.points.cols(); ++a)
      os << s.points(i, a) << (a + 1 < s.points.cols() ? ',' : '\n');
  return os.str();
}

// LGS1: magic, u32 N, u32 d, u32 reserved, then N x d little-endian f32.
inline std::string samples_to_lgs(const SampleSet &s) {
  std::string buf = "LGS1";
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.points.rows()));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.points.cols()));
  detail::put<std::uint32_t>(buf, 0);
  for (Eigen::Index i = 0; i < s.points.rows(); ++i)
    for (Eigen::Index a = 0; a < s.points.cols(); ++a)
      detail::put<float>(buf, static_cast<float>(s.points(i, a)));
  return buf;
}

inline SampleSet samples_from_lgs(const std::string &buf) {
  if (buf.size() < 16 || buf.compare(0, 4, "LGS1") != 0)
    fail("InvalidFile", "missing LGS1 header");
  std::size_t pos = 4;
  const auto n = detail::get<std::uint32_t>(buf, pos);
  const auto d = detail::get<std::uint32_t>(buf, pos);
  detail::get<std::uint32_t>(buf, pos);
  if (buf.size() != 16 + std::size_t{4} * n * d)
    fail("InvalidFile", "LGS1 payload size does not match N x d");
  SampleSet s;
  s.points.resize(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t a = 0; a < d; ++a)
      s.points(i, a) = detail::get<float>(buf, pos);
  return s;
}

// LGI1: magic, u32 N, C, H, W, then the f32 tensor.
inline std::string images_to_lgi(const ImageTensorSet &img) {
  std::string buf = "LGI1";
  for (auto v : {img.n, img.c, img.h, img.w})
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(v));
  for (float v : img.data)
    detail::put<float>(buf, v);
  return buf;
}

inline ImageTensorSet images_from_lgi(const std::string &buf) {
  if (buf.size() < 20 || buf.compare(0, 4, "LGI1") != 0)
    fail("InvalidFile", "missing LGI1 header");
  std::size_t pos = 4;
  std::size_t dims[4];
  for (auto &v : dims)
    v = detail::get<std::uint32_t>(buf, pos);
  const std::size_t count = dims[0] * dims[1] * dims[2] * dims[3];
  if (buf.size() != 20 + 4 * count)
    fail("InvalidFile", "LGI1 payload size does not match N x C x H x W");
  ImageTensorSet img(dims[0], dims[1], dims[2], dims[3]);
  for (auto &v : img.data)
    v = detail::get<float>(buf, pos);
  img.validate();
  return img;
}

// Dispatch on the magic bytes, CSV otherwise.
inline SampleSet load_samples(const std::filesystem::path &path) {
  const auto buf = read_file(path);
  if (buf.compare(0, 4, "LGS1") == 0)
    return samples_from_lgs(buf);
  if (buf.compare(0, 4, "LGI1") == 0)
    return images_from_lgi(buf).flatten();
  return samples_from_csv(buf);
}

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

// Standalone SVG line chart; with log_y, nonpositive values are skipped.
inline std::string svg_line_chart(const std::vector<PlotSeries> &series, const std::string &title,
                                  const std::string &xlabel, const std::string &ylabel,
                                  bool log_y = false) {
  const double width = 640, height = 420, left = 70, right = 160, top = 40, bottom = 50;
  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto &s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (log_y && s.y[i] <= 0.0))
        continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (!(x0 <= x1)) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 == x0)
    x1 = x0 + 1;
  if (y1 == y0)
    y1 = y0 + 1;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return top + (1.0 - (ty(v) - y0) / (y1 - y0)) * ph; };
  auto esc = [](const std::string &s) {
    std::string out;
    for (char ch : s) {
      if (ch == '<')
        out += "&lt;";
      else if (ch == '>')
        out += "&gt;";
      else if (ch == '&')
        out += "&amp;";
      else
        out += ch;
    }
    return out;
  };
  const char *colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << esc(title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0, fy = y0 + (y1 - y0) * t / 4.0;
    const double sx = left + pw * t / 4.0, sy = top + ph * (1.0 - t / 4.0);
    os << "<text x=\"" << sx << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fx
       << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">"
       << (log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">"
     << esc(xlabel) << "</text>\n";
  os << "<text transform=\"translate(16," << top + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << esc(ylabel) << (log_y ? " (log)" : "")
     << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto &s = series[k];
    const char *color = colors[k % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (log_y && s.y[i] <= 0.0))
        continue;
      os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 30
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly << "\">" << esc(s.label)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

} // namespace pdegan
