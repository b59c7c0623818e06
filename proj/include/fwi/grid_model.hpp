#pragma once

#include "fwi/types.hpp"

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fwi {

/// Regular 2D grid. Node (i, j) sits at x = i·dx, z = j·dz and has flat
/// index j·nx + i (rows of constant depth).
struct Grid2D {
  int nx = 0;
  int nz = 0;
  double dx = 0.0;
  double dz = 0.0;

  int size() const { return nx * nz; }
  int index(int i, int j) const { return j * nx + i; }
  int column_of(int k) const { return k % nx; }
  int row_of(int k) const { return k / nx; }
  double width() const { return (nx - 1) * dx; }
  double depth() const { return (nz - 1) * dz; }

  /// Throws ConfigError unless nx, nz ≥ 3 and dx, dz > 0.
  void validate() const;

  bool operator==(const Grid2D&) const = default;
};

/// Squared slowness (s²/m²) per grid node.
struct Model {
  Grid2D grid;
  VectorXd values;

  Model() = default;
  Model(const Grid2D& g, VectorXd v);
  static Model constant(const Grid2D& g, double velocity);

  int size() const { return static_cast<int>(values.size()); }
};

/// Pointwise v ↦ 1/v². Throws std::domain_error on a nonpositive velocity.
Model velocity_to_model(const Grid2D& grid, const VectorXd& velocity);
VectorXd model_to_velocity(const Model& model);

struct Station {
  int ix = 0;
  int iz = 0;
  bool operator==(const Station&) const = default;
};

struct Source {
  Station position;
  Complex amplitude{1.0, 0.0};
};

/// Sources and receivers snapped to nodes of the physical grid.
struct AcquisitionGeometry {
  Grid2D grid;
  std::vector<Source> sources;
  std::vector<Station> receivers;

  int source_count() const { return static_cast<int>(sources.size()); }
  int receiver_count() const { return static_cast<int>(receivers.size()); }

  /// Throws ConfigError if a station lies outside the grid.
  void validate() const;
};

/// `count` stations distributed by equal arc length on the rectangle one cell
/// inside the grid boundary, clockwise from the top-left corner, then snapped
/// to nodes. `phase` shifts the first station by that fraction of a step.
std::vector<Station> ring_stations(const Grid2D& grid, int count, double phase = 0.0);

/// Number of nodes whose value differs from `reference` (anomaly footprint).
int count_differing_nodes(const Model& model, const Model& reference);

struct Experiment {
  Model true_model;
  Model initial_model;
  AcquisitionGeometry geometry;
};

struct Disk {
  double x = 0.0;
  double z = 0.0;
  double radius = 0.0;
};

struct InclusionSetup {
  Grid2D grid{101, 101, 20.0, 20.0};
  double background_velocity = 1500.0;
  double anomaly_velocity = 4500.0;
  std::vector<Disk> disks{{700.0, 700.0, 200.0}, {1300.0, 1300.0, 200.0}};
  int source_count = 112;
  int receiver_count = 112;
};

/// Rectangle [x0, x1] × [z0, z1] in meters.
struct Block {
  double x0 = 0.0;
  double x1 = 0.0;
  double z0 = 0.0;
  double z1 = 0.0;
};

struct ConcreteSetup {
  Grid2D grid{101, 21, 0.15, 0.15};
  double background_velocity = 300.0;
  double anomaly_velocity = 4000.0;
  std::vector<Block> blocks{{6.75, 8.25, 0.9, 1.5}, {6.0, 9.0, 1.5, 2.1}};
  int station_count = 120;
};

/// Two high-velocity disks in a homogeneous background, ring acquisition.
/// The default grid spans 2 km × 2 km at 20 m.
Experiment build_inclusion_model(const InclusionSetup& setup = {});
Experiment build_inclusion_model(const std::optional<Grid2D>& grid_override);

/// Two stacked concrete blocks in a slow near-surface background, with
/// co-located ring sources and receivers. Default grid 15 m × 3 m at 0.15 m.
Experiment build_concrete_model(const ConcreteSetup& setup = {});
Experiment build_concrete_model(const std::optional<Grid2D>& grid_override);

// Text formats.
//   grid file:      "nx nz dx dz" then nz rows of nx velocities (m/s)
//   geometry file:  one "S|R x_meters z_meters" line per station
void write_velocity_grid(std::ostream& out, const Grid2D& grid, const VectorXd& velocity);
void write_velocity_grid(const std::string& path, const Model& model);
Model read_velocity_grid(std::istream& in);
Model read_velocity_grid(const std::string& path);

void write_geometry(std::ostream& out, const AcquisitionGeometry& geometry);
void write_geometry(const std::string& path, const AcquisitionGeometry& geometry);
AcquisitionGeometry read_geometry(std::istream& in, const Grid2D& grid);
AcquisitionGeometry read_geometry(const std::string& path, const Grid2D& grid);

}  // namespace fwi
