#include "doppio/factor_graph.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace doppio {

namespace {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

// column offsets of every node family in the stacked error vector
struct Layout {
  int n = 0;
  bool with_ext = false;
  int dim = 0;

  explicit Layout(const FactorGraph& g)
      : n(int(g.poses.size())), with_ext(g.with_extrinsic) {
    dim = 6 * n + (with_ext ? 6 + 9 * n : 0);
  }
  int pose(int i) const { return 6 * i; }
  int ext() const { return 6 * n; }
  int vel(int i) const { return 6 * n + 6 + 3 * i; }
  int bg(int i) const { return 6 * n + 6 + 3 * n + 3 * i; }
  int ba(int i) const { return 6 * n + 6 + 6 * n + 3 * i; }
};

// one linearized factor: residual, weight, and jacobian blocks addressed
// by column offset
struct Linearized {
  VecX r;
  MatX w;  // weight (information) matrix of the residual
  std::vector<std::pair<int, MatX>> blocks;
};

Mat3 jr_inv(const Vec3& phi) { return so3_right_jacobian_inv(phi); }

MatX diag_weight(const VecX& sigma) {
  VecX w = sigma.array().square().inverse();
  return w.asDiagonal();
}

void lin_pose_prior(const FactorGraph::PosePrior& f, const FactorGraph& g,
                    const Layout& lay, std::vector<Linearized>& out) {
  Linearized l;
  l.r.resize(6);
  const Vec3 rr = (f.value.rot.inverse() * g.poses[f.node].rot).log();
  l.r.head<3>() = rr;
  l.r.tail<3>() = g.poses[f.node].trans - f.value.trans;
  MatX j = MatX::Zero(6, 6);
  j.block<3, 3>(0, 0) = jr_inv(rr);
  j.block<3, 3>(3, 3) = Mat3::Identity();
  l.blocks.emplace_back(lay.pose(f.node), j);
  l.w = diag_weight(f.sigma);
  out.push_back(std::move(l));
}

void lin_rel_pose(const FactorGraph::RelPose& f, const FactorGraph& g,
                  const Layout& lay, std::vector<Linearized>& out) {
  const SO3& ra = g.poses[f.a].rot;
  const SO3& rb = g.poses[f.b].rot;
  const Vec3 dp = ra.inv_rotate(g.poses[f.b].trans - g.poses[f.a].trans);
  Linearized l;
  l.r.resize(6);
  const Vec3 rr = (f.rel.rot.inverse() * (ra.inverse() * rb)).log();
  l.r.head<3>() = rr;
  l.r.tail<3>() = dp - f.rel.trans;

  MatX ja = MatX::Zero(6, 6), jb = MatX::Zero(6, 6);
  ja.block<3, 3>(0, 0) = -jr_inv(rr) * (rb.inverse() * ra).matrix();
  ja.block<3, 3>(3, 0) = skew(dp);
  ja.block<3, 3>(3, 3) = -ra.matrix().transpose();
  jb.block<3, 3>(0, 0) = jr_inv(rr);
  jb.block<3, 3>(3, 3) = ra.matrix().transpose();
  l.blocks.emplace_back(lay.pose(f.a), ja);
  l.blocks.emplace_back(lay.pose(f.b), jb);
  l.w = diag_weight(f.sigma);
  out.push_back(std::move(l));
}

void lin_preint(const FactorGraph::Preint& f, const FactorGraph& g,
                const Layout& lay, std::vector<Linearized>& out) {
  const Preintegration& d = f.delta;
  const SO3& ra = g.poses[f.a].rot;
  const SO3& rb = g.poses[f.b].rot;
  const Mat3 rat = ra.matrix().transpose();
  const Vec3 y = g.velocities[f.b] - g.velocities[f.a] - g.gravity * d.dt;
  const Vec3 z = g.poses[f.b].trans - g.poses[f.a].trans -
                 g.velocities[f.a] * d.dt - 0.5 * d.dt * d.dt * g.gravity;

  Linearized l;
  l.r.resize(9);
  const Vec3 rr = (d.rot.inverse() * (ra.inverse() * rb)).log();
  l.r.segment<3>(0) = rr;
  l.r.segment<3>(3) = rat * y - d.vel;
  l.r.segment<3>(6) = rat * z - d.pos;

  MatX ja = MatX::Zero(9, 6), jb = MatX::Zero(9, 6);
  MatX jva = MatX::Zero(9, 3), jvb = MatX::Zero(9, 3);
  ja.block<3, 3>(0, 0) = -jr_inv(rr) * (rb.inverse() * ra).matrix();
  jb.block<3, 3>(0, 0) = jr_inv(rr);
  ja.block<3, 3>(3, 0) = skew(rat * y);
  ja.block<3, 3>(6, 0) = skew(rat * z);
  ja.block<3, 3>(6, 3) = -rat;
  jb.block<3, 3>(6, 3) = rat;
  jva.block<3, 3>(3, 0) = -rat;
  jva.block<3, 3>(6, 0) = -rat * d.dt;
  jvb.block<3, 3>(3, 0) = rat;
  l.blocks.emplace_back(lay.pose(f.a), ja);
  l.blocks.emplace_back(lay.pose(f.b), jb);
  l.blocks.emplace_back(lay.vel(f.a), jva);
  l.blocks.emplace_back(lay.vel(f.b), jvb);

  Eigen::Matrix<double, 9, 9> cov = d.cov;
  cov.diagonal().array() += 1e-12;
  l.w = cov.inverse();
  out.push_back(std::move(l));
}

void lin_ego_vel(const FactorGraph::EgoVel& f, const FactorGraph& g,
                 const Layout& lay, std::vector<Linearized>& out) {
  const SO3& rb = g.poses[f.node].rot;
  const Mat3 rsbt = g.ext_rot.matrix().transpose();
  const Vec3 w_unbiased = f.gyro - g.gyro_bias[f.node];
  const Vec3 y = rb.inv_rotate(g.velocities[f.node]);
  const Vec3 z = y + w_unbiased.cross(g.ext_pos);

  Linearized l;
  l.r = f.measured - rsbt * z;

  MatX jp = MatX::Zero(3, 6);
  jp.block<3, 3>(0, 0) = -rsbt * skew(y);
  MatX jv = -rsbt * rb.matrix().transpose();
  MatX jbg = -rsbt * skew(g.ext_pos);
  MatX je = MatX::Zero(3, 6);
  je.block<3, 3>(0, 0) = -skew(rsbt * z);
  je.block<3, 3>(0, 3) = -rsbt * skew(w_unbiased);
  l.blocks.emplace_back(lay.pose(f.node), jp);
  l.blocks.emplace_back(lay.vel(f.node), jv);
  l.blocks.emplace_back(lay.bg(f.node), jbg);
  l.blocks.emplace_back(lay.ext(), je);
  l.w = diag_weight(f.sigma);
  out.push_back(std::move(l));
}

void lin_ext_prior(const FactorGraph::ExtPrior& f, const FactorGraph& g,
                   const Layout& lay, std::vector<Linearized>& out) {
  Linearized l;
  l.r.resize(6);
  const Vec3 rr = (f.rot.inverse() * g.ext_rot).log();
  l.r.head<3>() = rr;
  l.r.tail<3>() = g.ext_pos - f.pos;
  MatX j = MatX::Zero(6, 6);
  j.block<3, 3>(0, 0) = jr_inv(rr);
  j.block<3, 3>(3, 3) = Mat3::Identity();
  l.blocks.emplace_back(lay.ext(), j);
  l.w = diag_weight(f.sigma);
  out.push_back(std::move(l));
}

void lin_bias_prior(const FactorGraph::BiasPrior& f, const FactorGraph& g,
                    const Layout& lay, std::vector<Linearized>& out) {
  Linearized l;
  l.r.resize(6);
  l.r.head<3>() = g.gyro_bias[f.node] - f.bg;
  l.r.tail<3>() = g.accel_bias[f.node] - f.ba;
  l.blocks.emplace_back(lay.bg(f.node), (MatX(6, 3) << Mat3::Identity(),
                                         Mat3::Zero())
                                            .finished());
  l.blocks.emplace_back(lay.ba(f.node), (MatX(6, 3) << Mat3::Zero(),
                                         Mat3::Identity())
                                            .finished());
  l.w = diag_weight(f.sigma);
  out.push_back(std::move(l));
}

void lin_bias_walk(const FactorGraph::BiasWalk& f, const FactorGraph& g,
                   const Layout& lay, std::vector<Linearized>& out) {
  Linearized l;
  l.r.resize(6);
  l.r.head<3>() = g.gyro_bias[f.b] - g.gyro_bias[f.a];
  l.r.tail<3>() = g.accel_bias[f.b] - g.accel_bias[f.a];
  const MatX top_p = (MatX(6, 3) << Mat3::Identity(), Mat3::Zero()).finished();
  const MatX bot_p = (MatX(6, 3) << Mat3::Zero(), Mat3::Identity()).finished();
  l.blocks.emplace_back(lay.bg(f.a), -top_p);
  l.blocks.emplace_back(lay.bg(f.b), top_p);
  l.blocks.emplace_back(lay.ba(f.a), -bot_p);
  l.blocks.emplace_back(lay.ba(f.b), bot_p);
  l.w = diag_weight(f.sigma);
  out.push_back(std::move(l));
}

std::vector<Linearized> linearize_all(const FactorGraph& g, const Layout& lay) {
  std::vector<Linearized> out;
  for (const auto& f : g.pose_priors) lin_pose_prior(f, g, lay, out);
  for (const auto& f : g.rel_poses) lin_rel_pose(f, g, lay, out);
  if (g.with_extrinsic) {
    for (const auto& f : g.preints) lin_preint(f, g, lay, out);
    for (const auto& f : g.ego_vels) lin_ego_vel(f, g, lay, out);
    for (const auto& f : g.ext_priors) lin_ext_prior(f, g, lay, out);
    for (const auto& f : g.bias_priors) lin_bias_prior(f, g, lay, out);
    for (const auto& f : g.bias_walks) lin_bias_walk(f, g, lay, out);
  }
  return out;
}

double total_cost(const std::vector<Linearized>& factors) {
  double c = 0;
  for (const Linearized& l : factors) c += l.r.dot(l.w * l.r);
  return c;
}

void assemble(const std::vector<Linearized>& factors, const Layout& lay,
              Eigen::SparseMatrix<double>* h, VecX* b) {
  std::vector<Triplet> trips;
  b->setZero(lay.dim);
  for (const Linearized& l : factors) {
    for (const auto& [ci, ji] : l.blocks) {
      const MatX wji = l.w * ji;
      b->segment(ci, ji.cols()) -= ji.transpose() * (l.w * l.r);
      for (const auto& [cj, jj] : l.blocks) {
        const MatX hij = wji.transpose() * jj;
        for (int r = 0; r < hij.rows(); ++r)
          for (int c = 0; c < hij.cols(); ++c)
            if (hij(r, c) != 0.0) trips.emplace_back(ci + r, cj + c, hij(r, c));
      }
    }
  }
  h->resize(lay.dim, lay.dim);
  h->setFromTriplets(trips.begin(), trips.end());
}

void apply_delta(FactorGraph& g, const Layout& lay, const VecX& d) {
  for (int i = 0; i < lay.n; ++i) {
    g.poses[i].rot = g.poses[i].rot * SO3::exp(d.segment<3>(lay.pose(i)));
    g.poses[i].trans += d.segment<3>(lay.pose(i) + 3);
  }
  if (lay.with_ext) {
    g.ext_rot = g.ext_rot * SO3::exp(d.segment<3>(lay.ext()));
    g.ext_pos += d.segment<3>(lay.ext() + 3);
    for (int i = 0; i < lay.n; ++i) {
      g.velocities[i] += d.segment<3>(lay.vel(i));
      g.gyro_bias[i] += d.segment<3>(lay.bg(i));
      g.accel_bias[i] += d.segment<3>(lay.ba(i));
    }
  }
}

void check_graph(const FactorGraph& g) {
  if (g.poses.empty()) throw std::invalid_argument("factor graph: no poses");
  if (g.factor_count() == 0)
    throw std::invalid_argument("factor graph: no factors");
  if (g.with_extrinsic &&
      (g.velocities.size() != g.poses.size() ||
       g.gyro_bias.size() != g.poses.size() ||
       g.accel_bias.size() != g.poses.size()))
    throw std::invalid_argument(
        "factor graph: velocity/bias nodes must match pose count");
}

}  // namespace

int FactorGraph::factor_count() const {
  return int(pose_priors.size() + rel_poses.size() + preints.size() +
             ego_vels.size() + ext_priors.size() + bias_priors.size() +
             bias_walks.size());
}

OptimizeStats optimize(FactorGraph& graph, const OptimizeOptions& opt) {
  check_graph(graph);
  const Layout lay(graph);
  OptimizeStats stats;

  auto factors = linearize_all(graph, lay);
  double cost = total_cost(factors);
  stats.initial_cost = cost;
  stats.final_cost = cost;

  double lambda = opt.init_lambda;
  Eigen::SparseMatrix<double> h;
  VecX b;
  for (int it = 0; it < opt.max_iterations; ++it) {
    stats.iterations = it + 1;
    assemble(factors, lay, &h, &b);

    bool accepted = false;
    FactorGraph trial = graph;
    while (lambda <= opt.lambda_ceiling) {
      Eigen::SparseMatrix<double> damped = h;
      for (int k = 0; k < lay.dim; ++k)
        damped.coeffRef(k, k) =
            h.coeff(k, k) + lambda * std::max(h.coeff(k, k), 1e-9);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
      if (solver.info() == Eigen::Success) {
        const VecX delta = solver.solve(b);
        if (delta.allFinite()) {
          trial = graph;
          apply_delta(trial, lay, delta);
          const auto trial_factors = linearize_all(trial, lay);
          const double trial_cost = total_cost(trial_factors);
          if (trial_cost <= cost + 1e-16) {
            graph = std::move(trial);
            factors = trial_factors;
            const double drop = cost - trial_cost;
            cost = trial_cost;
            stats.final_cost = cost;
            lambda = std::max(lambda / 3.0, 1e-12);
            accepted = true;
            if (drop <= opt.rel_cost_tol * std::max(cost, 1e-12)) {
              stats.converged = true;
              return stats;
            }
            break;
          }
        }
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      stats.failed = lambda > opt.lambda_ceiling && stats.iterations == 1;
      stats.converged = !stats.failed;
      return stats;
    }
  }
  return stats;
}

Mat6 extrinsic_covariance(const FactorGraph& graph) {
  if (!graph.with_extrinsic)
    throw std::logic_error("extrinsic_covariance: extrinsic node inactive");
  check_graph(graph);
  const Layout lay(graph);
  const auto factors = linearize_all(graph, lay);
  Eigen::SparseMatrix<double> h;
  VecX b;
  assemble(factors, lay, &h, &b);
  for (int k = 0; k < lay.dim; ++k) h.coeffRef(k, k) += 1e-12;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("extrinsic_covariance: indefinite system");
  MatX rhs = MatX::Zero(lay.dim, 6);
  rhs.block<6, 6>(lay.ext(), 0).setIdentity();
  const MatX cols = solver.solve(rhs);
  Mat6 cov = cols.block<6, 6>(lay.ext(), 0);
  return 0.5 * (cov + cov.transpose());
}

std::string FactorGraph::dump() const {
  std::ostringstream ss;
  ss << "nodes: " << poses.size() << " poses"
     << (with_extrinsic ? " + extrinsic + velocities + biases" : "") << "\n";
  for (const auto& f : pose_priors)
    ss << "pose_prior node=" << f.node << " t=(" << f.value.trans.transpose()
       << ")\n";
  for (const auto& f : rel_poses)
    ss << (f.is_loop ? "loop" : "odometry") << " " << f.a << "->" << f.b
       << " dt=(" << f.rel.trans.transpose() << ")\n";
  for (const auto& f : preints)
    ss << "preint " << f.a << "->" << f.b << " dt=" << f.delta.dt << "\n";
  for (const auto& f : ego_vels)
    ss << "ego_vel node=" << f.node << " v=(" << f.measured.transpose()
       << ")\n";
  for (const auto& f : ext_priors)
    ss << "ext_prior p=(" << f.pos.transpose() << ")\n";
  for (const auto& f : bias_priors) ss << "bias_prior node=" << f.node << "\n";
  for (const auto& f : bias_walks)
    ss << "bias_walk " << f.a << "->" << f.b << "\n";
  return ss.str();
}

}  // namespace doppio
