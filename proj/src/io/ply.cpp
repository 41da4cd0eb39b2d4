#include "dualsplat/io/ply.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "dualsplat/core/errors.hpp"

namespace dualsplat {

namespace {

struct PlyProperty {
  std::string name;
  std::string type;  // float, uchar, ...
};

struct PlyHeader {
  bool binary = false;
  size_t vertex_count = 0;
  std::vector<PlyProperty> props;
};

size_t type_size(const std::string& t) {
  if (t == "float" || t == "float32" || t == "int" || t == "int32" ||
      t == "uint" || t == "uint32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  if (t == "uchar" || t == "uint8" || t == "char" || t == "int8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  throw BadInput("", "unsupported ply property type '" + t + "'");
}

PlyHeader read_header(std::istream& in, const std::string& path) {
  PlyHeader h;
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0)
    throw BadInput(path, "not a ply file");
  bool in_vertex = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian")
        h.binary = true;
      else if (fmt == "ascii")
        h.binary = false;
      else
        throw BadInput(path, "unsupported ply format '" + fmt + "'");
    } else if (tok == "element") {
      std::string name;
      size_t count;
      ls >> name >> count;
      in_vertex = (name == "vertex");
      if (in_vertex) h.vertex_count = count;
    } else if (tok == "property" && in_vertex) {
      PlyProperty p;
      ls >> p.type >> p.name;
      if (p.type == "list") throw BadInput(path, "list properties unsupported");
      h.props.push_back(p);
    } else if (tok == "end_header") {
      return h;
    }
  }
  throw BadInput(path, "truncated ply header");
}

double parse_scalar(const char* buf, const std::string& type) {
  if (type == "float" || type == "float32") {
    float f;
    std::memcpy(&f, buf, 4);
    return f;
  }
  if (type == "double" || type == "float64") {
    double d;
    std::memcpy(&d, buf, 8);
    return d;
  }
  if (type == "uchar" || type == "uint8") return static_cast<unsigned char>(buf[0]);
  if (type == "char" || type == "int8") return static_cast<signed char>(buf[0]);
  if (type == "short" || type == "int16") {
    int16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (type == "ushort" || type == "uint16") {
    uint16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (type == "int" || type == "int32") {
    int32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

/// Reads all vertex rows into a column-per-property table of doubles.
std::vector<std::vector<double>> read_rows(std::istream& in, const PlyHeader& h,
                                           const std::string& path) {
  std::vector<std::vector<double>> cols(h.props.size());
  for (auto& c : cols) c.resize(h.vertex_count);
  if (h.binary) {
    size_t row_size = 0;
    std::vector<size_t> offsets;
    for (const auto& p : h.props) {
      offsets.push_back(row_size);
      row_size += type_size(p.type);
    }
    std::vector<char> row(row_size);
    for (size_t i = 0; i < h.vertex_count; ++i) {
      in.read(row.data(), static_cast<std::streamsize>(row_size));
      if (!in) throw BadInput(path, "truncated ply payload");
      for (size_t k = 0; k < h.props.size(); ++k)
        cols[k][i] = parse_scalar(row.data() + offsets[k], h.props[k].type);
    }
  } else {
    for (size_t i = 0; i < h.vertex_count; ++i) {
      for (size_t k = 0; k < h.props.size(); ++k) {
        if (!(in >> cols[k][i])) throw BadInput(path, "truncated ply payload");
      }
    }
  }
  return cols;
}

int find_prop(const PlyHeader& h, const std::string& name) {
  for (size_t k = 0; k < h.props.size(); ++k)
    if (h.props[k].name == name) return static_cast<int>(k);
  return -1;
}

int require_prop(const PlyHeader& h, const std::string& name,
                 const std::string& path) {
  const int k = find_prop(h, name);
  if (k < 0) throw BadInput(path, "ply missing property '" + name + "'");
  return k;
}

void put_f32(std::ostream& out, double v) {
  const float f = static_cast<float>(v);
  out.write(reinterpret_cast<const char*>(&f), 4);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BadInput(path, "cannot open for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BadInput(path, "cannot open for reading");
  return in;
}

int rest_count(int degree) { return 3 * (ShColor::coeff_count(degree) - 1); }

int degree_from_rest(int n_rest, const std::string& path) {
  for (int d = 0; d <= 2; ++d)
    if (rest_count(d) == n_rest) return d;
  throw BadInput(path, "unsupported f_rest count " + std::to_string(n_rest));
}

// f_rest is channel-major: all R higher-order coefficients, then G, then B.
void write_sh_rest(std::ostream& out, const ShColor& sh, int degree) {
  const int n = ShColor::coeff_count(degree);
  for (int c = 0; c < 3; ++c)
    for (int k = 1; k < n; ++k) put_f32(out, sh.coeffs(c, k));
}

}  // namespace

void write_pointcloud_ply(const std::string& path, const SemanticPointCloud& pc,
                          bool binary) {
  auto out = open_out(path);
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii")
      << " 1.0\nelement vertex " << pc.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\n"
         "property uchar semantic\nend_header\n";
  auto quantize = [](double v) {
    return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0), 0l, 255l));
  };
  for (size_t i = 0; i < pc.size(); ++i) {
    const Vec3& p = pc.positions[i];
    const Vec3& c = pc.colors[i];
    const uint8_t rgb[3] = {quantize(c.x()), quantize(c.y()), quantize(c.z())};
    const uint8_t sem = static_cast<uint8_t>(pc.labels[i]);
    if (binary) {
      put_f32(out, p.x());
      put_f32(out, p.y());
      put_f32(out, p.z());
      out.write(reinterpret_cast<const char*>(rgb), 3);
      out.write(reinterpret_cast<const char*>(&sem), 1);
    } else {
      out << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y()) << ' '
          << static_cast<float>(p.z()) << ' ' << int(rgb[0]) << ' ' << int(rgb[1])
          << ' ' << int(rgb[2]) << ' ' << int(sem) << '\n';
    }
  }
  if (!out) throw BadInput(path, "write failed");
}

SemanticPointCloud read_pointcloud_ply(const std::string& path) {
  auto in = open_in(path);
  const PlyHeader h = read_header(in, path);
  const auto cols = read_rows(in, h, path);
  const int ix = require_prop(h, "x", path), iy = require_prop(h, "y", path),
            iz = require_prop(h, "z", path);
  const int ir = find_prop(h, "red"), ig = find_prop(h, "green"),
            ib = find_prop(h, "blue"), is = find_prop(h, "semantic");
  SemanticPointCloud pc;
  pc.positions.reserve(h.vertex_count);
  for (size_t i = 0; i < h.vertex_count; ++i) {
    const Vec3 p(cols[ix][i], cols[iy][i], cols[iz][i]);
    if (!p.allFinite()) throw BadInput(path, "non-finite point coordinates");
    Vec3 c(0.5, 0.5, 0.5);
    if (ir >= 0 && ig >= 0 && ib >= 0)
      c = Vec3(cols[ir][i], cols[ig][i], cols[ib][i]) / 255.0;
    SemanticLabel l = SemanticLabel::NonRoad;
    if (is >= 0) {
      const int v = static_cast<int>(cols[is][i]);
      if (v < 0 || v > 2) throw BadInput(path, "semantic label out of range");
      l = static_cast<SemanticLabel>(v);
    }
    pc.append(p, c, l);
  }
  return pc;
}

void write_gaussians_ply(const std::string& path, const GaussianCloud& g) {
  auto out = open_out(path);
  const int n_rest = rest_count(g.sh_degree);
  out << "ply\nformat binary_little_endian 1.0\nelement vertex "
      << g.prims.size() << "\n";
  for (const char* p : {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"})
    out << "property float " << p << "\n";
  for (int k = 0; k < n_rest; ++k) out << "property float f_rest_" << k << "\n";
  out << "property float opacity\n";
  for (int k = 0; k < 3; ++k) out << "property float scale_" << k << "\n";
  for (int k = 0; k < 4; ++k) out << "property float rot_" << k << "\n";
  out << "end_header\n";
  for (const auto& prim : g.prims) {
    put_f32(out, prim.mean.x());
    put_f32(out, prim.mean.y());
    put_f32(out, prim.mean.z());
    for (int c = 0; c < 3; ++c) put_f32(out, prim.color.coeffs(c, 0));
    write_sh_rest(out, prim.color, g.sh_degree);
    const double a = std::clamp(prim.opacity, 1e-9, 1.0 - 1e-9);
    put_f32(out, std::log(a / (1.0 - a)));
    for (int k = 0; k < 3; ++k) put_f32(out, std::log(prim.scale[k]));
    for (int k = 0; k < 4; ++k) put_f32(out, prim.rotation[k]);
  }
  if (!out) throw BadInput(path, "write failed");
}

GaussianCloud read_gaussians_ply(const std::string& path) {
  auto in = open_in(path);
  const PlyHeader h = read_header(in, path);
  const auto cols = read_rows(in, h, path);
  int n_rest = 0;
  while (find_prop(h, "f_rest_" + std::to_string(n_rest)) >= 0) ++n_rest;
  GaussianCloud g;
  g.sh_degree = degree_from_rest(n_rest, path);
  const int n_coeff = ShColor::coeff_count(g.sh_degree);
  const int ix = require_prop(h, "x", path), iy = require_prop(h, "y", path),
            iz = require_prop(h, "z", path);
  const int iop = require_prop(h, "opacity", path);
  g.prims.resize(h.vertex_count);
  for (size_t i = 0; i < h.vertex_count; ++i) {
    Gaussian3D& prim = g.prims[i];
    prim.mean = Vec3(cols[ix][i], cols[iy][i], cols[iz][i]);
    prim.color.degree = g.sh_degree;
    for (int c = 0; c < 3; ++c)
      prim.color.coeffs(c, 0) =
          cols[require_prop(h, "f_dc_" + std::to_string(c), path)][i];
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < n_coeff; ++k)
        prim.color.coeffs(c, k) =
            cols[require_prop(h, "f_rest_" + std::to_string(c * (n_coeff - 1) + k - 1),
                              path)][i];
    prim.opacity = 1.0 / (1.0 + std::exp(-cols[iop][i]));
    for (int k = 0; k < 3; ++k)
      prim.scale[k] =
          std::exp(cols[require_prop(h, "scale_" + std::to_string(k), path)][i]);
    for (int k = 0; k < 4; ++k)
      prim.rotation[k] = cols[require_prop(h, "rot_" + std::to_string(k), path)][i];
  }
  return g;
}

void write_surfels_ply(const std::string& path, const SurfelCloud& s) {
  auto out = open_out(path);
  const int n_rest = rest_count(s.sh_degree);
  out << "ply\nformat binary_little_endian 1.0\nelement vertex "
      << s.prims.size() << "\n";
  for (const char* p : {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"})
    out << "property float " << p << "\n";
  for (int k = 0; k < n_rest; ++k) out << "property float f_rest_" << k << "\n";
  out << "property float opacity\n";
  out << "property float scale_0\nproperty float scale_1\n";
  for (int k = 0; k < 3; ++k) out << "property float tu_" << k << "\n";
  for (int k = 0; k < 3; ++k) out << "property float tv_" << k << "\n";
  out << "end_header\n";
  for (const auto& prim : s.prims) {
    put_f32(out, prim.center.x());
    put_f32(out, prim.center.y());
    put_f32(out, prim.center.z());
    for (int c = 0; c < 3; ++c) put_f32(out, prim.color.coeffs(c, 0));
    write_sh_rest(out, prim.color, s.sh_degree);
    const double a = std::clamp(prim.opacity, 1e-9, 1.0 - 1e-9);
    put_f32(out, std::log(a / (1.0 - a)));
    put_f32(out, std::log(prim.scale_u));
    put_f32(out, std::log(prim.scale_v));
    for (int k = 0; k < 3; ++k) put_f32(out, prim.tangent_u[k]);
    for (int k = 0; k < 3; ++k) put_f32(out, prim.tangent_v[k]);
  }
  if (!out) throw BadInput(path, "write failed");
}

SurfelCloud read_surfels_ply(const std::string& path) {
  auto in = open_in(path);
  const PlyHeader h = read_header(in, path);
  const auto cols = read_rows(in, h, path);
  int n_rest = 0;
  while (find_prop(h, "f_rest_" + std::to_string(n_rest)) >= 0) ++n_rest;
  SurfelCloud s;
  s.sh_degree = degree_from_rest(n_rest, path);
  const int n_coeff = ShColor::coeff_count(s.sh_degree);
  const int ix = require_prop(h, "x", path), iy = require_prop(h, "y", path),
            iz = require_prop(h, "z", path);
  const int iop = require_prop(h, "opacity", path);
  s.prims.resize(h.vertex_count);
  for (size_t i = 0; i < h.vertex_count; ++i) {
    Surfel2D& prim = s.prims[i];
    prim.center = Vec3(cols[ix][i], cols[iy][i], cols[iz][i]);
    prim.color.degree = s.sh_degree;
    for (int c = 0; c < 3; ++c)
      prim.color.coeffs(c, 0) =
          cols[require_prop(h, "f_dc_" + std::to_string(c), path)][i];
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < n_coeff; ++k)
        prim.color.coeffs(c, k) =
            cols[require_prop(h, "f_rest_" + std::to_string(c * (n_coeff - 1) + k - 1),
                              path)][i];
    prim.opacity = 1.0 / (1.0 + std::exp(-cols[iop][i]));
    prim.scale_u = std::exp(cols[require_prop(h, "scale_0", path)][i]);
    prim.scale_v = std::exp(cols[require_prop(h, "scale_1", path)][i]);
    for (int k = 0; k < 3; ++k) {
      prim.tangent_u[k] = cols[require_prop(h, "tu_" + std::to_string(k), path)][i];
      prim.tangent_v[k] = cols[require_prop(h, "tv_" + std::to_string(k), path)][i];
    }
  }
  return s;
}

}  // namespace dualsplat
