// fetalbet: brain extraction, training and evaluation from the command line.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fetalbet/fetalbet.hpp"

namespace fs = std::filesystem;
using namespace fetalbet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted = true; }

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int report(const std::string& category, const std::string& message, int code) {
  std::string flat = message;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  std::cerr << "error[" << category << "]: " << flat << '\n';
  return code;
}

std::string select_device(const std::string& requested) {
  // Only a CPU backend is compiled in.
  if (requested == "cuda") std::cerr << "note: no accelerator backend available, falling back to cpu\n";
  return "cpu";
}

// Bare model names are looked up in FETALBET_CACHE_DIR.
std::string resolve_model(const std::string& model) {
  if (fs::exists(model)) return model;
  if (const char* cache = std::getenv("FETALBET_CACHE_DIR")) {
    for (const auto& candidate : {fs::path(cache) / model, fs::path(cache) / (model + ".ckpt")})
      if (fs::exists(candidate)) return candidate.string();
  }
  return model;
}

bool is_nifti(const fs::path& p) {
  const auto name = p.filename().string();
  return name.ends_with(".nii") || name.ends_with(".nii.gz");
}

std::string strip_nifti(const std::string& name) {
  for (const char* ext : {".nii.gz", ".nii"})
    if (name.ends_with(ext)) return name.substr(0, name.size() - std::string(ext).size());
  return name;
}

std::string subject_from_filename(const std::string& name) {
  const auto stem = strip_nifti(name);
  const auto cut = stem.find('_');
  return cut == std::string::npos ? stem : stem.substr(0, cut);
}

std::string sequence_from_filename(const std::string& name) {
  std::string token;
  const auto stem = strip_nifti(name) + "_";
  for (char ch : stem) {
    if (ch == '_' || ch == '-' || ch == '.') {
      std::string upper = token;
      std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
      if (upper == "T2W" || upper == "T2") return "T2W";
      if (upper == "DWI") return "DWI";
      if (upper == "FMRI" || upper == "BOLD") return "fMRI";
      token.clear();
    } else {
      token += ch;
    }
  }
  return "unknown";
}

std::vector<std::string> list_masks(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_nifti(e.path())) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string input, model, output, prob_output, device = "auto";
  int slice_axis = -1;
  double threshold = 0.5;
  int window = 256;
  int threads = 1;
  bool largest_component = false;
};

int run_extract(const ExtractArgs& a) {
  const auto device = select_device(a.device);
  const auto loaded = load_checkpoint<float>(resolve_model(a.model));
  std::optional<int> axis;
  if (a.slice_axis >= 0) axis = a.slice_axis;
  const auto volumes = load_volumes(a.input, axis);
  ExtractOptions opt;
  opt.threshold = a.threshold;
  opt.window = static_cast<std::size_t>(a.window);
  opt.largest_component = a.largest_component;
  opt.keep_probability = !a.prob_output.empty();
  opt.num_threads = static_cast<std::size_t>(std::max(1, a.threads));

  std::vector<MaskVolume> masks;
  std::vector<std::vector<float>> probs;
  std::size_t slices = 0;
  double seconds = 0;
  for (std::size_t t = 0; t < volumes.size(); ++t) {
    if (g_interrupted) throw TrainingError("interrupted");
    auto r = extract_brain(volumes[t], loaded.model, opt);
    slices += r.slices;
    seconds += r.seconds;
    masks.push_back(std::move(r.mask));
    if (opt.keep_probability) probs.push_back(std::move(r.probability));
  }
  save_masks(masks, volumes.front(), a.output);
  if (opt.keep_probability) save_float_volumes(probs, volumes.front(), a.prob_output);
  std::cout << std::fixed << std::setprecision(3) << "extracted " << a.input << ": " << slices << " slices in "
            << seconds << " s (" << (slices ? 1000.0 * seconds / static_cast<double>(slices) : 0.0)
            << " ms/slice, device " << device << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, manifest, sequence = "all", device = "auto";
  int workers = 1;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  try {
    cfg = load_train_config(a.config);
  } catch (const ValidationError& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  select_device(a.device);
  const auto manifest = load_manifest(a.manifest);
  validate_manifest(manifest);
  SplitOptions split;
  split.patch_size = static_cast<std::size_t>(cfg.model.patch_size);
  if (a.sequence != "all") split.sequence = parse_sequence(a.sequence);
  const auto sets = split_subjects(manifest, split);
  for (const auto& w : sets.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "training " << to_string(cfg.model.family) << " on " << sets.train.size() << " slices ("
            << sets.val.size() << " validation)\n";

  TrainOptions opt;
  opt.cancel = &g_interrupted;
  opt.num_workers = static_cast<std::size_t>(std::max(1, a.workers));
  opt.on_epoch = [&](const EpochRecord& e) {
    std::cout << "epoch " << e.epoch << "/" << cfg.epochs << " loss " << e.train_loss;
    if (!std::isnan(e.val_dsc)) std::cout << " val_dsc " << e.val_dsc << " val_iou " << e.val_iou;
    std::cout << " (" << std::setprecision(2) << e.wall_time << " s)" << std::setprecision(6) << std::endl;
  };
  const auto result = train(cfg, sets.train, sets.val, opt);
  std::cout << "best checkpoint: " << result.best_checkpoint << "\nlast checkpoint: " << result.last_checkpoint
            << "\nhistory: " << result.history_csv << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string pred_dir, ref_dir, out, compare, unit = "stack", method = "pred", compare_method = "compare";
  int slice_axis = -1;
  bool exclude_empty = false;
};

MetricsTable evaluate_dir(const std::string& pred_dir, const std::string& ref_dir, const std::string& method,
                          int slice_axis, bool& interrupted) {
  const auto preds = list_masks(pred_dir);
  if (preds.empty()) throw ValidationError("prediction directory '" + pred_dir + "' holds no NIfTI masks");
  const auto refs = list_masks(ref_dir);
  const std::set<std::string> pset(preds.begin(), preds.end()), rset(refs.begin(), refs.end());
  std::vector<std::string> orphans;
  for (const auto& p : preds)
    if (!rset.count(p)) orphans.push_back(pred_dir + "/" + p);
  for (const auto& r : refs)
    if (!pset.count(r)) orphans.push_back(ref_dir + "/" + r);
  if (!orphans.empty()) {
    std::string list;
    for (const auto& o : orphans) list += (list.empty() ? "" : ", ") + o;
    throw ValidationError("unmatched mask files: " + list);
  }
  MetricsTable table;
  for (const auto& name : preds) {
    if (g_interrupted) {
      interrupted = true;
      break;
    }
    const auto pred = load_mask((fs::path(pred_dir) / name).string());
    const auto ref = load_mask((fs::path(ref_dir) / name).string());
    const int axis = slice_axis >= 0 ? slice_axis : default_slice_axis(ref.spacing);
    auto rows = evaluate_pair(pred, ref, {subject_from_filename(name), strip_nifti(name), sequence_from_filename(name), method},
                              axis);
    table.insert(table.end(), rows.begin(), rows.end());
  }
  return table;
}

int run_evaluate(const EvaluateArgs& a) {
  const Unit unit = parse_unit(a.unit);
  bool interrupted = false;
  auto table = evaluate_dir(a.pred_dir, a.ref_dir, a.method, a.slice_axis, interrupted);
  std::vector<ComparisonResult> comparisons;
  if (!a.compare.empty() && !interrupted) {
    const auto other = evaluate_dir(a.compare, a.ref_dir, a.compare_method, a.slice_axis, interrupted);
    table.insert(table.end(), other.begin(), other.end());
    if (!interrupted) comparisons = compare_methods(table, a.method, a.compare_method, unit);
  }
  if (table.empty()) throw TrainingError("interrupted before any pair was evaluated");
  AggregateOptions opt;
  opt.include_both_empty = !a.exclude_empty;
  const auto agg = aggregate(table, unit, opt);
  for (const auto& w : agg.warnings) std::cerr << "warning: " << w << '\n';
  export_report(a.out, table, agg.rows, comparisons);

  std::cout << "evaluated " << table.size() << " slices; report written to " << a.out << '\n';
  for (const auto& r : agg.rows)
    if (r.group == "ALL")
      std::cout << "  " << r.method << " " << r.sequence << ": dsc " << std::setprecision(4) << r.dsc.mean << " +/- "
                << r.dsc.std << ", iou " << r.iou.mean << " +/- " << r.iou.std << " (" << r.dsc.n << " "
                << to_string(unit) << "s)\n";
  for (const auto& c : comparisons) {
    std::cout << "  " << c.method_a << " vs " << c.method_b << " [" << c.sequence << ", " << c.metric << "]: ";
    if (c.status == "ok")
      std::cout << "t " << c.t_statistic << ", p " << std::scientific << c.p_value << std::defaultfloat << " "
                << c.stars << '\n';
    else if (c.status == "degenerate")
      std::cout << "degenerate (zero variance of differences)\n";
    else
      std::cout << "insufficient pairs (" << c.n << ")\n";
  }
  if (interrupted) throw TrainingError("interrupted; partial report written to " + a.out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_sigint);
  CLI::App app{"Fetal brain extraction for multi-sequence MRI", "fetalbet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fetalbet 1.0.0");

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Predict a brain mask for a volume");
  extract->add_option("--input", ex.input, "Input volume (.nii or .nii.gz)")->required();
  extract->add_option("--model", ex.model, "Checkpoint path or name under FETALBET_CACHE_DIR")->required();
  extract->add_option("--output", ex.output, "Output mask path")->required();
  extract->add_option("--prob-output", ex.prob_output, "Optional foreground probability volume path");
  extract->add_option("--slice-axis", ex.slice_axis, "Slice axis 0-2; -1 picks the lowest-resolution axis")
      ->capture_default_str()
      ->check(CLI::Range(-1, 2));
  extract->add_option("--threshold", ex.threshold, "Foreground probability threshold")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  extract->add_option("--window", ex.window, "Sliding window size in pixels")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  extract->add_option("--threads", ex.threads, "Slices predicted concurrently")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  extract->add_flag("--largest-component", ex.largest_component, "Keep only the largest connected component per slice");
  extract->add_option("--device", ex.device, "Compute device")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "cpu", "cuda"}));

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Train a model from a dataset manifest");
  trainc->add_option("--config", tr.config, "Training configuration (JSON)")->required();
  trainc->add_option("--manifest", tr.manifest, "Dataset manifest CSV")->required();
  trainc->add_option("--sequence", tr.sequence, "Sequence filter")
      ->capture_default_str()
      ->check(CLI::IsMember({"T2W", "DWI", "fMRI", "all"}));
  trainc->add_option("--workers", tr.workers, "Augmentation worker threads")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  trainc->add_option("--device", tr.device, "Compute device")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "cpu", "cuda"}));

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score predicted masks against references");
  evaluate->add_option("--pred-dir", ev.pred_dir, "Directory of predicted masks")->required();
  evaluate->add_option("--ref-dir", ev.ref_dir, "Directory of reference masks (matched by filename)")->required();
  evaluate->add_option("--out", ev.out, "Report directory")->required();
  evaluate->add_option("--compare", ev.compare, "Second prediction directory for paired testing");
  evaluate->add_option("--unit", ev.unit, "Pairing unit for t-tests")
      ->capture_default_str()
      ->check(CLI::IsMember({"slice", "stack", "subject"}));
  evaluate->add_option("--method-name", ev.method, "Label for --pred-dir results")->capture_default_str();
  evaluate->add_option("--compare-name", ev.compare_method, "Label for --compare results")->capture_default_str();
  evaluate->add_option("--slice-axis", ev.slice_axis, "Slice axis 0-2; -1 picks the lowest-resolution axis")
      ->capture_default_str()
      ->check(CLI::Range(-1, 2));
  evaluate->add_flag("--exclude-empty", ev.exclude_empty, "Drop slices where both masks are empty from aggregates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report("usage", e.what(), kExitUsage);
    const CLI::App* sub = nullptr;
    for (auto* s : {extract, trainc, evaluate})
      if (s->parsed()) sub = s;
    std::cerr << (sub ? sub->help() : app.help());
    return kExitUsage;
  }

  try {
    if (extract->parsed()) return run_extract(ex);
    if (trainc->parsed()) return run_train(tr);
    return run_evaluate(ev);
  } catch (const UsageError& e) {
    return report("usage", e.what(), kExitUsage);
  } catch (const Error& e) {
    return report(std::string(to_string(e.kind())), e.what(), kExitRuntime);
  } catch (const std::exception& e) {
    return report("runtime", e.what(), kExitRuntime);
  }
}
