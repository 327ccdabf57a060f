// scaleloc: dataset generation, training, evaluation and audits.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 I/O or malformed
// input, 4 audit above tolerance, 5 checkpoint rejected (corrupt, wrong
// version or wrong shape).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "scaleloc/audit.hpp"
#include "scaleloc/pipeline.hpp"

using namespace scaleloc;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  bool dump_config = false;
  std::string out;
  std::string dataset;
  std::string checkpoint;
  std::string policy;
  std::string detections;
  int scenes = 0;
  int scene_index = 0;
  int count = 5;
  double tolerance = 1e-3;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed_set) cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot open for writing: " + p.string());
  return os;
}

fs::path out_dir(const Options& o) {
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required flag ") + flag);
}

Workspace load_workspace(const Options& o, const RunConfig& cfg) {
  require(o.dataset, "--dataset");
  return prepare_workspace(read_dataset(o.dataset), cfg, o.threads);
}

ProposalModel load_proposals(const Options& o, const RunConfig& cfg) {
  require(o.checkpoint, "--checkpoint");
  return load_proposal_model(o.checkpoint, init_proposal_model(cfg.pyramid, cfg.anchors, cfg.loss.mode,
                                                               cfg.proposal_train.hidden, cfg.seed));
}

// ---- commands ----

int gen_data(const Options& o, const RunConfig& cfg) {
  require(o.out, "--out");
  GenConfig g = cfg.scenegen;
  if (o.scenes > 0) g.scenes = o.scenes;
  const auto scenes = sample_dataset(g, cfg.seed);
  write_dataset(o.out, scenes);
  std::size_t objects = 0;
  for (const auto& s : scenes) objects += s.objects.size();
  std::cout << "wrote " << scenes.size() << " scenes, " << objects << " objects to " << o.out << '\n';
  return 0;
}

int train_proposals(const Options& o, const RunConfig& cfg) {
  const Workspace ws = load_workspace(o, cfg);
  const fs::path dir = out_dir(o);
  std::vector<ProposalLogEntry> log;
  const ProposalModel model = fit_proposals(cfg, ws, {}, cfg.seed, &log);
  save_checkpoint((dir / "proposals.slck").string(), model);
  auto csv = open_out(dir / "proposals_log.csv");
  csv << "step,objective,positives,negatives\n";
  for (const auto& e : log) csv << e.step << ',' << e.objective << ',' << e.positives << ',' << e.negatives << '\n';
  auto ini = open_out(dir / "config.ini");
  ini << dump_config(cfg);
  std::cout << "trained proposal heads on " << ws.size() << " scenes";
  if (!log.empty()) std::cout << ", final objective " << fmt(log.back().objective);
  std::cout << "\nwrote " << (dir / "proposals.slck").string() << '\n';
  return 0;
}

int train_policy_cmd(const Options& o, const RunConfig& cfg) {
  const Workspace ws = load_workspace(o, cfg);
  const ProposalModel proposals = load_proposals(o, cfg);
  const fs::path dir = out_dir(o);
  const ProposalSets sets = propose(proposals, ws, cfg, {}, o.threads);
  std::vector<PolicyLogEntry> log;
  const PolicyParams params = fit_policy(cfg, ws, sets, cfg.seed, o.threads, &log);
  save_checkpoint((dir / "policy.slck").string(), params);
  auto csv = open_out(dir / "policy_log.csv");
  write_policy_log_csv(csv, log);
  auto ini = open_out(dir / "config.ini");
  ini << dump_config(cfg);
  std::cout << "trained policy on " << ws.size() << " scenes";
  if (!log.empty()) std::cout << ", final mean reward " << fmt(log.back().mean_reward);
  std::cout << "\nwrote " << (dir / "policy.slck").string() << '\n';
  return 0;
}

// Detections file: one JSON object per line,
// {"scene": "<scene id>", "box": [x, y, w, h], "score": s}.
std::vector<std::vector<Detection>> read_detections(const std::string& path, const std::vector<Scene>& scenes) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open detections: " + path);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < scenes.size(); ++i) index[scenes[i].id] = i;
  std::vector<std::vector<Detection>> out(scenes.size());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto it = index.find(j.at("scene").get<std::string>());
      if (it == index.end()) throw std::invalid_argument("unknown scene " + j.at("scene").get<std::string>());
      const auto& b = j.at("box");
      if (!b.is_array() || b.size() != 4) throw std::invalid_argument("box must have 4 numbers");
      out[it->second].push_back({BBox(b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()),
                                 j.at("score").get<double>(), it->second});
    } catch (const std::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

void write_curves(const fs::path& dir, const std::string& label, const LamrTriple& t) {
  const std::pair<const char*, const EvalCurve*> curves[] = {
      {"all", &t.curve_all}, {"near", &t.curve_near}, {"far", &t.curve_far}};
  for (const auto& [name, c] : curves) {
    auto os = open_out(dir / (label + "_curve_" + name + ".csv"));
    write_curve_csv(os, *c);
  }
}

int eval_cmd(const Options& o, const RunConfig& cfg) {
  require(o.dataset, "--dataset");
  const fs::path dir = out_dir(o);
  std::ostringstream summary;
  if (!o.detections.empty()) {
    const auto scenes = read_dataset(o.dataset);
    std::vector<std::vector<BBox>> gts;
    for (const auto& s : scenes) gts.push_back(boxes_of(s));
    const LamrTriple t = evaluate_all(read_detections(o.detections, scenes), gts, cfg.eval);
    write_curves(dir, "detections", t);
    write_summary(summary, "detections", t);
  } else {
    const Workspace ws = load_workspace(o, cfg);
    const ProposalModel proposals = load_proposals(o, cfg);
    const ProposalSets sets = propose(proposals, ws, cfg, {}, o.threads);
    const LamrTriple base = evaluate_all(proposal_detections(sets, cfg.eval), ws.gts, cfg.eval);
    write_curves(dir, "proposals", base);
    write_summary(summary, "proposals", base);
    if (!o.policy.empty()) {
      const PolicyParams params = load_policy(o.policy, cfg.policy_dims());
      const Refinement ref = refine(params, cfg, ws, sets, cfg.seed, o.threads);
      const LamrTriple refined = evaluate_all(ref.detections, ws.gts, cfg.eval);
      write_curves(dir, "refined", refined);
      write_summary(summary, "refined", refined);
      summary << "median_episode_length " << fmt(median_length(ref.lengths)) << '\n';
      summary << "mean_iou initial " << fmt(ref.mean_initial_iou) << " final " << fmt(ref.mean_final_iou) << '\n';
    }
  }
  auto os = open_out(dir / "summary.txt");
  os << summary.str();
  std::cout << summary.str();
  return 0;
}

int gradcheck(const Options& o) {
  const std::uint64_t base = o.seed_set ? o.seed : 1;
  double worst = 0.0;
  auto line = [&](const std::string& name, const AuditResult& r) {
    std::cout << name << " max_rel_error " << r.max_rel_error << " over " << r.checked << " parameters\n";
    worst = std::max(worst, r.max_rel_error);
  };
  for (std::uint64_t s = base; s < base + 3; ++s) {
    const std::string tag = " seed " + std::to_string(s);
    line("proposal linear" + tag, proposal_gradient_audit(s, 0));
    line("proposal hidden" + tag, proposal_gradient_audit(s, 5));
    line("policy tanh" + tag, policy_gradient_audit(s, RecurrenceMode::Tanh));
    line("policy gated" + tag, policy_gradient_audit(s, RecurrenceMode::Gated));
  }
  const BanditCheck b = bandit_check(base, 50000, 0.0);
  std::cout << "bandit rel_error " << b.rel_error_all << " (informational)\n";
  const bool ok = worst < o.tolerance;
  std::cout << "max relative error " << worst << (ok ? " < " : " >= ") << o.tolerance << (ok ? " ok" : " FAILED")
            << '\n';
  return ok ? 0 : 4;
}

int demo_trace(const Options& o, const RunConfig& cfg) {
  require(o.policy, "--policy");
  const Workspace all = load_workspace(o, cfg);
  if (o.scene_index < 0 || static_cast<std::size_t>(o.scene_index) >= all.size())
    throw ConfigError("--scene out of range: " + std::to_string(o.scene_index));
  const auto i = static_cast<std::size_t>(o.scene_index);
  const ProposalModel proposals = load_proposals(o, cfg);
  const PolicyParams params = load_policy(o.policy, cfg.policy_dims());
  const auto anchors = generate_anchors(proposals.pyramid, proposals.anchors, cfg.scenegen.extent);
  const auto props = select_proposals(score_proposals(proposals, all.pyramids[i], anchors, {}),
                                      static_cast<std::size_t>(std::max(o.count, 0)), cfg.proposal_train.nms_iou);
  std::ofstream jsonl;
  if (!o.out.empty()) {
    jsonl.open(o.out);
    if (!jsonl) throw IoError("cannot open for writing: " + o.out);
  }
  auto box_json = [](const BBox& b) { return nlohmann::json::array({b.x, b.y, b.w, b.h}); };
  auto box_text = [](const BBox& b) {
    std::ostringstream s;
    s << '(' << fmt(b.x) << ", " << fmt(b.y) << ", " << fmt(b.w) << ", " << fmt(b.h) << ')';
    return s.str();
  };
  std::cout << "scene " << all.scenes[i].id << " with " << all.gts[i].size() << " objects\n";
  for (std::size_t k = 0; k < props.size(); ++k) {
    Rng rng(derive_seed(cfg.seed, 0x5ce0000 + i, k));
    const Trajectory t = rollout(params, cfg.env, all.pyramids[i], props[k], all.gts[i], rng,
                                 cfg.pyramid.roi_size, cfg.greedy_eval);
    std::cout << "proposal " << k << " layer " << props[k].layer_id << " objectness " << fmt(props[k].objectness)
              << " iou " << fmt(best_iou(props[k].box, all.gts[i])) << '\n';
    nlohmann::json actions = nlohmann::json::array(), boxes = nlohmann::json::array();
    for (std::size_t s = 0; s < t.length(); ++s) {
      const auto name = std::string(to_string(static_cast<Action>(t.steps[s].action)));
      std::cout << "  " << s << " L" << t.steps[s].layer_id << ' ' << box_text(t.boxes[s]) << ' ' << name << '\n';
      actions.push_back(name);
      boxes.push_back(box_json(t.boxes[s]));
    }
    std::cout << "  final " << box_text(t.final_box) << " iou " << fmt(best_iou(t.final_box, all.gts[i]))
              << " reward " << fmt(t.reward) << '\n';
    if (jsonl.is_open())
      jsonl << nlohmann::json{{"scene", all.scenes[i].id},     {"proposal", box_json(props[k].box)},
                              {"objectness", props[k].objectness}, {"actions", actions},
                              {"boxes", boxes},                    {"final", box_json(t.final_box)},
                              {"reward", t.reward}}
                   .dump()
            << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale proposals with a learned box refinement policy"};
  app.require_subcommand(0, 1);
  Options o;
  app.add_option("--config", o.config, "INI run configuration");
  app.add_option("--threads", o.threads, "Worker threads (default: all cores)")->check(CLI::PositiveNumber);
  app.add_flag("--dump-config", o.dump_config, "Print the resolved configuration and exit");
  auto seed_opt = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { o.seed = s, o.seed_set = true; }, "Run seed");
  };
  seed_opt(&app);

  auto* gen = app.add_subcommand("gen-data", "Sample a synthetic dataset");
  gen->add_option("--out", o.out, "Output dataset (JSONL)");
  gen->add_option("--scenes", o.scenes, "Scene count (default from config)");
  seed_opt(gen);

  auto* tp = app.add_subcommand("train-proposals", "Train the multi-layer proposal heads");
  tp->add_option("--dataset", o.dataset, "Training dataset");
  tp->add_option("--out", o.out, "Output directory");
  seed_opt(tp);

  auto* tpol = app.add_subcommand("train-policy", "Train the refinement policy");
  tpol->add_option("--dataset", o.dataset, "Training dataset");
  tpol->add_option("--checkpoint", o.checkpoint, "Proposal checkpoint");
  tpol->add_option("--out", o.out, "Output directory");
  seed_opt(tpol);

  auto* ev = app.add_subcommand("eval", "Evaluate proposals, refined boxes or a detections file");
  ev->add_option("--dataset", o.dataset, "Test dataset");
  ev->add_option("--checkpoint", o.checkpoint, "Proposal checkpoint");
  ev->add_option("--policy", o.policy, "Policy checkpoint (adds the refined evaluation)");
  ev->add_option("--detections", o.detections, "Detections JSONL to score instead of a model");
  ev->add_option("--out", o.out, "Output directory");
  seed_opt(ev);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient audits");
  gc->add_option("--tolerance", o.tolerance, "Maximum relative error");
  seed_opt(gc);

  auto* dt = app.add_subcommand("demo-trace", "Print the policy's action sequence for each proposal");
  dt->add_option("--dataset", o.dataset, "Dataset");
  dt->add_option("--checkpoint", o.checkpoint, "Proposal checkpoint");
  dt->add_option("--policy", o.policy, "Policy checkpoint");
  dt->add_option("--scene", o.scene_index, "Scene index");
  dt->add_option("--count", o.count, "Number of proposals");
  dt->add_option("--out", o.out, "Trace JSONL output");
  seed_opt(dt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = resolve_config(o);
    if (o.dump_config) {
      std::cout << dump_config(cfg);
      return 0;
    }
    if (gen->parsed()) return gen_data(o, cfg);
    if (tp->parsed()) return train_proposals(o, cfg);
    if (tpol->parsed()) return train_policy_cmd(o, cfg);
    if (ev->parsed()) return eval_cmd(o, cfg);
    if (gc->parsed()) return gradcheck(o);
    if (dt->parsed()) return demo_trace(o, cfg);
    std::cout << app.help();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "malformed input: " << e.what() << '\n';
    return 3;
  } catch (const IntegrityError& e) {
    std::cerr << "checkpoint rejected: " << e.what() << '\n';
    return 5;
  } catch (const ShapeError& e) {
    std::cerr << "checkpoint rejected: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
