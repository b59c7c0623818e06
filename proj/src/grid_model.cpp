#include "fwi/grid_model.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace fwi {

void Grid2D::validate() const {
  if (nx < 3 || nz < 3) {
    throw ConfigError("grid needs at least 3 nodes per axis, got " + std::to_string(nx) +
                      "x" + std::to_string(nz));
  }
  if (!(dx > 0.0) || !(dz > 0.0)) {
    throw ConfigError("grid spacing must be positive");
  }
}

Model::Model(const Grid2D& g, VectorXd v) : grid(g), values(std::move(v)) {
  grid.validate();
  if (values.size() != grid.size()) {
    throw ConfigError("model size does not match grid");
  }
  if (!values.allFinite() || (values.array() <= 0.0).any()) {
    throw std::domain_error("squared slowness must be positive and finite");
  }
}

Model Model::constant(const Grid2D& g, double velocity) {
  return velocity_to_model(g, VectorXd::Constant(g.size(), velocity));
}

Model velocity_to_model(const Grid2D& grid, const VectorXd& velocity) {
  if (!velocity.allFinite() || (velocity.array() <= 0.0).any()) {
    throw std::domain_error("velocity must be strictly positive");
  }
  return Model(grid, velocity.array().square().inverse().matrix());
}

VectorXd model_to_velocity(const Model& model) {
  return model.values.array().rsqrt().matrix();
}

void AcquisitionGeometry::validate() const {
  grid.validate();
  auto inside = [&](const Station& s) {
    return s.ix >= 0 && s.ix < grid.nx && s.iz >= 0 && s.iz < grid.nz;
  };
  for (const auto& s : sources) {
    if (!inside(s.position)) throw ConfigError("source outside the grid");
  }
  for (const auto& r : receivers) {
    if (!inside(r)) throw ConfigError("receiver outside the grid");
  }
}

std::vector<Station> ring_stations(const Grid2D& grid, int count, double phase) {
  grid.validate();
  if (count < 1) throw ConfigError("station count must be positive");

  const double left = grid.dx;
  const double top = grid.dz;
  const double w = (grid.nx - 3) * grid.dx;
  const double h = (grid.nz - 3) * grid.dz;
  const double perimeter = 2.0 * (w + h);
  const double step = perimeter / count;

  std::vector<Station> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    double s = std::fmod((k + phase) * step, perimeter);
    double x = 0.0;
    double z = 0.0;
    if (s < w) {
      x = left + s;
      z = top;
    } else if (s < w + h) {
      x = left + w;
      z = top + (s - w);
    } else if (s < 2.0 * w + h) {
      x = left + w - (s - w - h);
      z = top + h;
    } else {
      x = left;
      z = top + h - (s - 2.0 * w - h);
    }
    out.push_back({static_cast<int>(std::lround(x / grid.dx)),
                   static_cast<int>(std::lround(z / grid.dz))});
  }
  return out;
}

int count_differing_nodes(const Model& model, const Model& reference) {
  return static_cast<int>((model.values.array() != reference.values.array()).count());
}

namespace {

void check_inside(const Grid2D& grid, double x0, double x1, double z0, double z1) {
  if (x0 < 0.0 || z0 < 0.0 || x1 > grid.width() || z1 > grid.depth()) {
    throw ConfigError("anomaly does not fit inside the grid; grid is too small or too coarse");
  }
}

}  // namespace

Experiment build_inclusion_model(const InclusionSetup& setup) {
  const Grid2D& g = setup.grid;
  g.validate();

  VectorXd velocity = VectorXd::Constant(g.size(), setup.background_velocity);
  for (const auto& disk : setup.disks) {
    check_inside(g, disk.x - disk.radius, disk.x + disk.radius, disk.z - disk.radius,
                 disk.z + disk.radius);
    if (disk.radius > 0.0 && disk.radius < 0.5 * std::min(g.dx, g.dz)) {
      throw ConfigError("grid too coarse to resolve an inclusion disk");
    }
    for (int j = 0; j < g.nz; ++j) {
      for (int i = 0; i < g.nx; ++i) {
        const double dx = i * g.dx - disk.x;
        const double dz = j * g.dz - disk.z;
        if (std::hypot(dx, dz) < disk.radius) velocity(g.index(i, j)) = setup.anomaly_velocity;
      }
    }
  }

  Experiment e;
  e.true_model = velocity_to_model(g, velocity);
  e.initial_model = Model::constant(g, setup.background_velocity);
  e.geometry.grid = g;
  for (const auto& s : ring_stations(g, setup.source_count)) e.geometry.sources.push_back({s});
  // Receivers interleave with the sources along the ring.
  e.geometry.receivers = ring_stations(g, setup.receiver_count, 0.5);
  e.geometry.validate();
  return e;
}

Experiment build_inclusion_model(const std::optional<Grid2D>& grid_override) {
  InclusionSetup setup;
  if (grid_override) setup.grid = *grid_override;
  return build_inclusion_model(setup);
}

Experiment build_concrete_model(const ConcreteSetup& setup) {
  const Grid2D& g = setup.grid;
  g.validate();

  VectorXd velocity = VectorXd::Constant(g.size(), setup.background_velocity);
  constexpr double tol = 1e-9;
  for (const auto& b : setup.blocks) {
    check_inside(g, b.x0, b.x1, b.z0, b.z1);
    for (int j = 0; j < g.nz; ++j) {
      for (int i = 0; i < g.nx; ++i) {
        const double x = i * g.dx;
        const double z = j * g.dz;
        if (x >= b.x0 - tol && x <= b.x1 + tol && z >= b.z0 - tol && z <= b.z1 + tol) {
          velocity(g.index(i, j)) = setup.anomaly_velocity;
        }
      }
    }
  }

  Experiment e;
  e.true_model = velocity_to_model(g, velocity);
  e.initial_model = Model::constant(g, setup.background_velocity);
  e.geometry.grid = g;
  const auto ring = ring_stations(g, setup.station_count);
  for (const auto& s : ring) e.geometry.sources.push_back({s});
  e.geometry.receivers = ring;
  e.geometry.validate();
  return e;
}

Experiment build_concrete_model(const std::optional<Grid2D>& grid_override) {
  ConcreteSetup setup;
  if (grid_override) setup.grid = *grid_override;
  return build_concrete_model(setup);
}

// ---------------------------------------------------------------------------
// Text I/O

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return in;
}

}  // namespace

void write_velocity_grid(std::ostream& out, const Grid2D& grid, const VectorXd& velocity) {
  out << std::setprecision(17);
  out << grid.nx << ' ' << grid.nz << ' ' << grid.dx << ' ' << grid.dz << '\n';
  for (int j = 0; j < grid.nz; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      if (i) out << ' ';
      out << velocity(grid.index(i, j));
    }
    out << '\n';
  }
}

void write_velocity_grid(const std::string& path, const Model& model) {
  auto out = open_out(path);
  write_velocity_grid(out, model.grid, model_to_velocity(model));
}

Model read_velocity_grid(std::istream& in) {
  Grid2D grid;
  if (!(in >> grid.nx >> grid.nz >> grid.dx >> grid.dz)) {
    throw ConfigError("malformed grid header");
  }
  grid.validate();
  VectorXd velocity(grid.size());
  for (int k = 0; k < grid.size(); ++k) {
    if (!(in >> velocity(k))) throw ConfigError("grid file truncated");
  }
  return velocity_to_model(grid, velocity);
}

Model read_velocity_grid(const std::string& path) {
  auto in = open_in(path);
  return read_velocity_grid(in);
}

void write_geometry(std::ostream& out, const AcquisitionGeometry& geometry) {
  out << std::setprecision(17);
  const auto& g = geometry.grid;
  for (const auto& s : geometry.sources) {
    out << "S " << s.position.ix * g.dx << ' ' << s.position.iz * g.dz << '\n';
  }
  for (const auto& r : geometry.receivers) {
    out << "R " << r.ix * g.dx << ' ' << r.iz * g.dz << '\n';
  }
}

void write_geometry(const std::string& path, const AcquisitionGeometry& geometry) {
  auto out = open_out(path);
  write_geometry(out, geometry);
}

AcquisitionGeometry read_geometry(std::istream& in, const Grid2D& grid) {
  AcquisitionGeometry geometry;
  geometry.grid = grid;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string tag;
    double x = 0.0;
    double z = 0.0;
    if (!(row >> tag >> x >> z)) throw ConfigError("malformed geometry line: " + line);
    const Station st{static_cast<int>(std::lround(x / grid.dx)),
                     static_cast<int>(std::lround(z / grid.dz))};
    if (tag == "S") {
      geometry.sources.push_back({st});
    } else if (tag == "R") {
      geometry.receivers.push_back(st);
    } else {
      throw ConfigError("geometry tag must be S or R: " + line);
    }
  }
  geometry.validate();
  return geometry;
}

AcquisitionGeometry read_geometry(const std::string& path, const Grid2D& grid) {
  auto in = open_in(path);
  return read_geometry(in, grid);
}

}  // namespace fwi
