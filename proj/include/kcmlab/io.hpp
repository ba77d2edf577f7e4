#pragma once

// Plain-text persistence: JSON-lines trajectories, frame snapshots, CSV
// tables and JSON violation reports. Doubles are written in the shortest
// form that round-trips exactly.

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kcmlab/cluster.hpp"
#include "kcmlab/coupling.hpp"
#include "kcmlab/dynamics.hpp"
#include "kcmlab/renorm.hpp"

namespace kcm {

/// Shortest round-trip decimal form; "inf" / "-inf" / "nan" otherwise.
std::string format_double(double v);

nlohmann::json box_to_json(const Box& b);
Box box_from_json(const nlohmann::json& j);
nlohmann::json boundary_to_json(const Boundary& b);
Boundary boundary_from_json(const nlohmann::json& j);

/// Header line (kind, family, box, boundary, q, horizon, seed, replica,
/// initial bits) followed by one {"t","x","v"} line per state change.
void write_trajectory_jsonl(std::ostream& os, const Trajectory& t);
Trajectory read_trajectory_jsonl(std::istream& is);

/// One line per frame: {"dim","lower","upper","time","bits"}.
void write_frames_jsonl(std::ostream& os, const std::vector<Frame>& frames);
void write_frames_jsonl(std::ostream& os, const DiscreteTrajectory& t);
std::vector<Frame> read_frames_jsonl(std::istream& is);

/// x_1..x_d,s_x
void write_passage_csv(std::ostream& os, const PassageField& f);
/// x_1..x_d,t_x,t_tilde,base_count
void write_renorm_passage_csv(std::ostream& os, const RenormPassageField& f);
/// x_1..x_d,tau,good
void write_good_box_csv(std::ostream& os, const GoodBoxField& f);
/// t,p_hat,ci_lo,ci_hi,n_replicas
void write_survival_csv(std::ostream& os, const SurvivalCurve& c);
/// n,t_hat,ci_lo,ci_hi,lower_hat,lower_ci_lo,lower_ci_hi,censored
void write_mixing_csv(std::ostream& os, const std::vector<MixingEstimate>& rows);
/// ell,count,censored_count,p_hat,ci_lo,ci_hi
void write_tail_csv(std::ostream& os, const TailTable& t);

nlohmann::json violations_to_json(const GrandCouplingReport& r);
nlohmann::json violations_to_json(const RenormCheckReport& r);
nlohmann::json violations_to_json(const PassageCouplingReport& r);
nlohmann::json fit_to_json(const ExpFit& f);

/// Parses a CSV written by this module into a header and numeric rows.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};
CsvTable read_csv(std::istream& is);

}  // namespace kcm
