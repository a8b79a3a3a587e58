#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include "fixtures.hpp"
#include "mvcount/error.hpp"
#include "mvcount/geometry.hpp"

namespace mvcount {
namespace {

using testing::identity_camera;
using testing::overhead_camera;
using testing::random_oblique_camera;
using testing::small_scene;

// Ray/plane intersection written out component-wise, independent of the library.
std::optional<Eigen::Vector3d> oracle_ground_hit(const CameraModel& cam, double h, double u, double v) {
  const Eigen::Matrix3d Rt = cam.R.transpose();
  const Eigen::Vector3d d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  Eigen::Vector3d d;
  for (int r = 0; r < 3; ++r) d[r] = Rt(r, 0) * d_cam[0] + Rt(r, 1) * d_cam[1] + Rt(r, 2) * d_cam[2];
  Eigen::Vector3d o;
  for (int r = 0; r < 3; ++r) o[r] = -(Rt(r, 0) * cam.T[0] + Rt(r, 1) * cam.T[1] + Rt(r, 2) * cam.T[2]);
  if (d.z() == 0.0) return std::nullopt;
  const double t = (h - o.z()) / d.z();
  if (t <= 0.0) return std::nullopt;
  return Eigen::Vector3d(o.x() + t * d.x(), o.y() + t * d.y(), h);
}

TEST(CameraModel, ValidateRejectsBadIntrinsicsAndRotations) {
  CameraModel cam;
  cam.width = cam.height = 10;
  EXPECT_NO_THROW(cam.validate());
  cam.fx = 0.0;
  EXPECT_THROW(cam.validate(), Error);
  cam.fx = 1.0;
  cam.R(0, 1) = 0.1;
  EXPECT_THROW(cam.validate(), Error);
  cam.R = Eigen::Vector3d(1.0, 1.0, -1.0).asDiagonal();  // reflection
  EXPECT_THROW(cam.validate(), Error);
  cam.R.setIdentity();
  cam.width = 0;
  EXPECT_THROW(cam.validate(), Error);
}

TEST(CameraModel, CentreSatisfiesExtrinsics) {
  CounterRng rng(11, 0);
  const SceneConfig scene = small_scene(40, 40);
  for (int i = 0; i < 20; ++i) {
    const CameraModel cam = random_oblique_camera(scene, rng);
    cam.validate();
    EXPECT_LT((cam.R * cam.center() + cam.T).norm(), 1e-6);
  }
}

TEST(CameraModel, LookAtCentresTheTarget) {
  const Eigen::Vector3d target(1200.0, -300.0, 0.0);
  const CameraModel cam = CameraModel::look_at("c", {9000.0, 4000.0, 6000.0}, target, 50.0, 64, 48);
  const auto p = cam.project(target);
  ASSERT_TRUE(p);
  EXPECT_NEAR(p->x(), 31.5, 1e-9);
  EXPECT_NEAR(p->y(), 23.5, 1e-9);
  // World up appears toward smaller image y.
  const auto above = cam.project(target + Eigen::Vector3d(0.0, 0.0, 500.0));
  ASSERT_TRUE(above);
  EXPECT_LT(above->y(), p->y());
}

TEST(ProjectPixelToGround, PrincipalRayMeetsPlaneOnAxis) {
  CameraModel cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 50.0;
  cam.width = cam.height = 101;
  const SceneConfig scene{1750.0, 0.0, 0.0, 100.0, 10, 10};
  const auto hit = project_pixel_to_ground(cam, scene, {50.0, 50.0});
  ASSERT_TRUE(hit);
  EXPECT_DOUBLE_EQ(hit->x(), 0.0);
  EXPECT_DOUBLE_EQ(hit->y(), 0.0);
  EXPECT_DOUBLE_EQ(hit->z(), 1750.0);
}

TEST(ProjectPixelToGround, PlaneBehindOrParallelIsInvalid) {
  const SceneConfig scene{1750.0, 0.0, 0.0, 100.0, 10, 10};
  CameraModel up;
  up.fx = up.fy = 100.0;
  up.width = up.height = 10;
  up.T = Eigen::Vector3d(0.0, 0.0, -3000.0);  // centre at z = 3000, looking further up
  EXPECT_FALSE(project_pixel_to_ground(up, scene, {0.0, 0.0}));

  // Horizontal camera above the plane: the principal ray is parallel to it.
  const CameraModel level = CameraModel::look_at("c", {0.0, 0.0, 3000.0}, {0.0, 1000.0, 3000.0}, 50.0, 11, 11);
  EXPECT_FALSE(project_pixel_to_ground(level, scene, {5.0, 5.0}));
  EXPECT_FALSE(project_pixel_to_ground(level, scene, {5.0, 2.0}));  // above the horizon
  EXPECT_TRUE(project_pixel_to_ground(level, scene, {5.0, 8.0}));
}

TEST(ProjectPixelToGround, RoundTripThousandPlanePoints) {
  CounterRng rng(12, 0);
  const SceneConfig scene = small_scene(40, 40);
  const CameraModel cam = random_oblique_camera(scene, rng);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d w(rng.uniform(0.0, 9750.0), rng.uniform(0.0, 9750.0), scene.h_avg);
    const auto px = cam.project(w);
    ASSERT_TRUE(px);
    const auto back = project_pixel_to_ground(cam, scene, *px);
    ASSERT_TRUE(back);
    EXPECT_LT((back->head<2>() - w.head<2>()).norm(), 1e-6);
    const auto again = cam.project(*back);
    EXPECT_LT((*again - *px).norm(), 1e-6);
    ++checked;
  }
  EXPECT_EQ(checked, 1000);
}

TEST(Correspondence, IdentityCameraGivesExactLattice) {
  const SceneConfig scene = small_scene(12, 9);
  const CameraModel cam = identity_camera(scene);
  const auto g2i = build_correspondence(cam, scene, FieldDirection::GroundToImage);
  ASSERT_EQ(g2i.valid_count(), 12u * 9u);
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 12; ++x) {
      EXPECT_EQ(g2i.coord(y, x).x(), x);
      EXPECT_EQ(g2i.coord(y, x).y(), y);
    }
  }
  const auto i2g = build_correspondence(cam, scene, FieldDirection::ImageToGround);
  ASSERT_EQ(i2g.valid_count(), 12u * 9u);
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 12; ++x) EXPECT_LT((i2g.coord(y, x) - Eigen::Vector2d(x, y)).norm(), 1e-12);
  }
  EXPECT_THROW(build_correspondence(cam, scene, FieldDirection::Resize), Error);
}

TEST(Correspondence, OverheadCameraSeesCentredRectangle) {
  const SceneConfig scene = small_scene(40, 40);
  // 4250 mm above the plane with f = 17 px: one pixel per cell, 20 x 20 px image.
  const CameraModel cam = overhead_camera(scene, 6000.0, 17.0, 20, 20);
  const auto field = build_correspondence(cam, scene, FieldDirection::GroundToImage);
  int min_x = 99, max_x = -1, min_y = 99, max_y = -1;
  for (int y = 0; y < 40; ++y) {
    for (int x = 0; x < 40; ++x) {
      if (!field.is_valid(y, x)) continue;
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
  }
  EXPECT_EQ(min_x + max_x, 39);
  EXPECT_EQ(min_y + max_y, 39);
  EXPECT_EQ(static_cast<std::size_t>((max_x - min_x + 1) * (max_y - min_y + 1)), field.valid_count());
  EXPECT_FALSE(field.is_valid(0, 0));
  EXPECT_FALSE(field.is_valid(39, 39));
  EXPECT_TRUE(field.is_valid(20, 20));
}

TEST(Correspondence, MatchesPerPixelOracle) {
  CounterRng rng(13, 0);
  const SceneConfig scene = small_scene(40, 40);
  for (int trial = 0; trial < 3; ++trial) {
    const CameraModel cam = random_oblique_camera(scene, rng);
    for (int stride : {1, 2, 4}) {
      const auto field = build_correspondence(cam, scene, FieldDirection::ImageToGround, stride);
      const ImageRaster r = image_raster(cam, stride);
      ASSERT_EQ(field.target_width, r.width);
      for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) {
          const double u = stride * x + 0.5 * (stride - 1);
          const double v = stride * y + 0.5 * (stride - 1);
          const auto hit = oracle_ground_hit(cam, scene.h_avg, u, v);
          bool inside = false;
          Eigen::Vector2d cell;
          if (hit) {
            cell = {hit->x() / scene.cell_size, hit->y() / scene.cell_size};
            inside = cell.x() >= -0.5 && cell.y() >= -0.5 && cell.x() <= 39.5 && cell.y() <= 39.5;
          }
          ASSERT_EQ(field.is_valid(y, x), inside) << x << "," << y;
          if (inside) {
            EXPECT_LT((field.coord(y, x) - cell).norm(), 1e-9);
          }
        }
      }
    }
  }
}

TEST(Correspondence, CompositionIsIdentityWithinHalfCell) {
  CounterRng rng(14, 0);
  const SceneConfig scene = small_scene(40, 40);
  const CameraModel cam = random_oblique_camera(scene, rng);
  const auto g2i = build_correspondence(cam, scene, FieldDirection::GroundToImage);
  int checked = 0;
  for (int y = 0; y < 40; ++y) {
    for (int x = 0; x < 40; ++x) {
      if (!g2i.is_valid(y, x)) continue;
      const auto hit = project_pixel_to_ground(cam, scene, g2i.coord(y, x));
      ASSERT_TRUE(hit);
      EXPECT_LT((scene.world_to_cell(hit->x(), hit->y()) - Eigen::Vector2d(x, y)).norm(), 0.5);
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(DistanceMap, AxisAlignedExample) {
  const SceneConfig scene = small_scene(8, 8);
  const CameraModel cam = identity_camera(scene);
  const Map2D d = distance_map(cam, scene);
  EXPECT_DOUBLE_EQ(d.at(0, 0), 1750.0);
  EXPECT_NEAR(d.at(0, 3), std::hypot(1750.0, 750.0), 1e-9);
}

TEST(DistanceMap, EqualsEuclideanOracle) {
  CounterRng rng(15, 0);
  const SceneConfig scene = small_scene(40, 40);
  const CameraModel cam = random_oblique_camera(scene, rng);
  const Map2D d = distance_map(cam, scene, 2);
  const Eigen::Vector3d o = cam.center();
  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      const auto hit = oracle_ground_hit(cam, scene.h_avg, 2 * x + 0.5, 2 * y + 0.5);
      if (!hit) {
        EXPECT_FALSE(d.valid(y, x));
        EXPECT_EQ(d.at(y, x), kInvalidDistance);
        continue;
      }
      EXPECT_GT(d.at(y, x), 0.0);
      EXPECT_NEAR(d.at(y, x), (*hit - o).norm(), 1e-6 * d.at(y, x));
    }
  }
}

TEST(DistanceMap, GrowsTowardTheHorizon) {
  CounterRng rng(16, 0);
  const SceneConfig scene = small_scene(40, 40);
  const CameraModel cam = random_oblique_camera(scene, rng);
  const Map2D d = distance_map(cam, scene);
  const int x = cam.width / 2;
  for (int y = cam.height - 1; y > 0; --y) {
    if (!d.valid(y - 1, x)) break;
    EXPECT_GT(d.at(y - 1, x), d.at(y, x)) << "row " << y;
  }
}

TEST(DistanceMap, InvariantUnderRigidWorldMotion) {
  CounterRng rng(17, 0);
  const SceneConfig scene = small_scene(40, 40);
  const CameraModel cam = random_oblique_camera(scene, rng);
  // Rotation about the vertical plus a horizontal shift keeps the plane z = h_avg fixed.
  const Eigen::Matrix3d Q = Eigen::AngleAxisd(0.7, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Vector3d t(1234.0, -567.0, 0.0);
  CameraModel moved = cam;
  moved.R = cam.R * Q.transpose();
  moved.T = -moved.R * (Q * cam.center() + t);
  const Map2D a = distance_map(cam, scene);
  const Map2D b = distance_map(moved, scene);
  ASSERT_EQ(a.mask(), b.mask());
  for (std::size_t i = 0; i < a.cells(); ++i) {
    if (a.mask()[i]) {
      EXPECT_NEAR(a.values()[i], b.values()[i], 1e-6 * a.values()[i]);
    }
  }
}

TEST(ViewRayAngle, ClockwiseFromPlusY) {
  const Eigen::Vector3d o(0.0, 0.0, 5000.0);
  EXPECT_NEAR(view_ray_angle(o, 0.0, 1000.0), 0.0, 1e-12);
  EXPECT_NEAR(view_ray_angle(o, 1000.0, 0.0), 90.0, 1e-12);
  EXPECT_NEAR(view_ray_angle(o, 0.0, -1000.0), 180.0, 1e-12);
  EXPECT_NEAR(view_ray_angle(o, -1000.0, 0.0), 270.0, 1e-12);
  const double a = view_ray_angle(o, -1.0, 1000.0);
  EXPECT_GT(a, 359.9);
  EXPECT_LT(a, 360.0);
}

TEST(ViewRayAngle, MapMatchesDotProductOracle) {
  CounterRng rng(18, 0);
  const SceneConfig scene = small_scene(40, 40);
  const CameraModel cam = random_oblique_camera(scene, rng);
  const Map2D m = view_ray_angle_map(cam, scene);
  const Eigen::Vector3d o = cam.center();
  for (int y = 0; y < 40; ++y) {
    for (int x = 0; x < 40; ++x) {
      const Eigen::Vector2d v = scene.cell_center(x, y) - o.head<2>();
      if (v.norm() < scene.cell_size) {
        EXPECT_FALSE(m.valid(y, x));
        continue;
      }
      // Angle from (0,1) via acos; the sign of the cross product picks the half-turn.
      double deg = std::acos(std::clamp(v.y() / v.norm(), -1.0, 1.0)) * 180.0 / std::numbers::pi;
      if (v.x() < 0.0) deg = 360.0 - deg;
      double diff = std::abs(m.at(y, x) - deg);
      diff = std::min(diff, 360.0 - diff);
      EXPECT_LT(diff, 1e-9);
      EXPECT_GE(m.at(y, x), 0.0);
      EXPECT_LT(m.at(y, x), 360.0);
    }
  }
}

TEST(ViewRayAngle, CellsAtTheFootprintAreInvalid) {
  const SceneConfig scene = small_scene(20, 20);
  const CameraModel cam = overhead_camera(scene, 6000.0, 17.0, 20, 20);
  const Map2D m = view_ray_angle_map(cam, scene);
  // Footprint sits between cells 9 and 10 on both axes.
  EXPECT_FALSE(m.valid(9, 9));
  EXPECT_FALSE(m.valid(10, 10));
  EXPECT_TRUE(m.valid(0, 0));
}

TEST(ViewRayAngle, ShiftsByAppliedPlanarRotation) {
  CounterRng rng(19, 0);
  const Eigen::Vector3d o(300.0, -200.0, 4000.0);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector2d p(rng.uniform(-5000.0, 5000.0), rng.uniform(-5000.0, 5000.0));
    const double theta = rng.uniform(0.0, 360.0);
    // Clockwise rotation by theta about the footprint.
    const double r = -theta * std::numbers::pi / 180.0;
    const Eigen::Vector2d d = p - o.head<2>();
    const Eigen::Vector2d q(std::cos(r) * d.x() - std::sin(r) * d.y(), std::sin(r) * d.x() + std::cos(r) * d.y());
    const double before = view_ray_angle(o, p.x(), p.y());
    const double after = view_ray_angle(o, o.x() + q.x(), o.y() + q.y());
    double diff = std::fmod(after - before - theta + 720.0, 360.0);
    diff = std::min(diff, 360.0 - diff);
    EXPECT_LT(diff, 1e-9);
  }
}

TEST(ResizeField, PixelCentresAlignAndClamp) {
  const auto f = resize_field(GridTag::ground(), 4, 4, GridTag::ground(), 8, 8);
  EXPECT_DOUBLE_EQ(f.coord(0, 0).x(), 0.0);   // -0.25 clamped
  EXPECT_DOUBLE_EQ(f.coord(0, 1).x(), 0.25);
  EXPECT_DOUBLE_EQ(f.coord(0, 7).x(), 3.0);   // 3.25 clamped
  EXPECT_EQ(f.valid_count(), 64u);
}

}  // namespace
}  // namespace mvcount
