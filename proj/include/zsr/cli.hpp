#pragma once

// Command-line front end: gen-synth, train, retrieve, eval, gradcheck.
// Exit codes: 0 ok, 1 validation error, 2 IO/format error, 3 numerical failure.

#include <filesystem>
#include <iostream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zsr/data.hpp"
#include "zsr/diagnostics.hpp"
#include "zsr/errors.hpp"
#include "zsr/metrics.hpp"
#include "zsr/retrieval.hpp"
#include "zsr/training.hpp"

namespace zsr::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2, kNumerical = 3 };

namespace fs = std::filesystem;

inline const std::map<std::string, Term>& term_by_name() {
  static const std::map<std::string, Term> m{{"cls", Term::kCls},
                                             {"or", Term::kOr},
                                             {"kl", Term::kKl},
                                             {"l2_sk", Term::kL2Sketch},
                                             {"l2_im", Term::kL2Image}};
  return m;
}

inline const std::map<std::string, RankSpace>& space_by_name() {
  static const std::map<std::string, RankSpace> m{{"fusion", RankSpace::kFusion},
                                                  {"structure", RankSpace::kStructure},
                                                  {"sketch", RankSpace::kSketch},
                                                  {"image", RankSpace::kImage}};
  return m;
}

struct GenSynthArgs {
  SyntheticSpec spec;
  fs::path out_dir;
};

struct TrainArgs {
  fs::path images, sketches, split, out, config;
  std::vector<std::string> disable;
  bool quiet = false;
  // Flag overrides, applied after the config file.
  std::map<std::string, std::string> overrides;
};

struct RetrieveArgs {
  fs::path checkpoint, queries, gallery, split, out;
  FusionWeights weights;
  std::size_t k = 200;
  std::string space = "fusion";
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct EvalArgs {
  fs::path rankings, queries, gallery, split, out, csv;
  std::size_t k = 200;
  std::string ap_normalization = "retrieved";
};

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::uint32_t seeds = 1;
  double step = 1e-5;
  double tolerance = 1e-5;
};

inline int gen_synth(const GenSynthArgs& a, std::ostream& out) {
  const SyntheticData data = generate_synthetic(a.spec);
  fs::create_directories(a.out_dir);
  write_features(data.images, a.out_dir / "images.sfv");
  write_features(data.sketches, a.out_dir / "sketches.sfv");
  write_split(data.split, a.out_dir / "split.txt");
  if (data.holdout_images.rows() > 0) {
    write_features(data.holdout_images, a.out_dir / "holdout_images.sfv");
  }
  out << "wrote " << data.images.rows() << " images and " << data.sketches.rows()
      << " sketches to " << a.out_dir.string() << "\n";
  return kOk;
}

inline int train_cmd(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig config;
  if (!a.config.empty()) apply_config_text(config, io::read_text(a.config));
  for (const auto& [k, v] : a.overrides) set_config_value(config, k, v);
  for (const auto& name : a.disable) {
    config.loss.enabled[static_cast<std::size_t>(term_by_name().at(name))] = false;
  }
  const SplitSpec split = read_split(a.split);
  const FeatureSet images = read_features(a.images);
  const FeatureSet sketches = read_features(a.sketches);
  split.validate_against(images, "image");
  split.validate_against(sketches, "sketch");
  const TrainPool pool = make_train_pool(images, sketches, split.seen);
  for (const auto& w : config.validate()) err << "warning: " << w << "\n";
  EpochCallback progress;
  if (!a.quiet) {
    progress = [&out](std::uint32_t epoch, const LossBreakdown& m) {
      char line[200];
      std::snprintf(line, sizeof(line),
                    "epoch %4u  total %.5f  cls %.5f  or %.5f  kl %.5f  sk %.5f  im %.5f\n", epoch,
                    m.total, m.l_cls, m.l_or, m.l_kl, m.l2_sk, m.l2_im);
      out << line;
    };
  }
  const TrainResult result = train(config, pool, progress);
  save_checkpoint(result.checkpoint, a.out);
  out << "saved checkpoint to " << a.out.string() << "\n";
  return kOk;
}

inline int retrieve_cmd(const RetrieveArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  FeatureSet queries = read_features(a.queries);
  FeatureSet gallery = read_features(a.gallery);
  std::vector<std::uint32_t> query_rows, gallery_rows;
  if (!a.split.empty()) {
    const ZeroShotSplit z = apply_split(gallery, queries, read_split(a.split));
    queries = z.queries;
    gallery = z.gallery;
    query_rows = z.query_rows;
    gallery_rows = z.gallery_rows;
  }
  if (gallery.rows() == 0) throw ValidationError("retrieve: empty gallery");
  const auto model = ckpt.model();
  RetrievalOptions opt;
  opt.weights = a.weights;
  opt.space = space_by_name().at(a.space);
  opt.seed = a.seed;
  opt.threads = a.threads;
  opt.top_k = a.k;
  const PreparedGallery prepared = prepare_gallery(model, gallery, gallery_rows);
  const auto lists = rank_queries(model, queries, prepared, opt, query_rows);
  io::write_text(a.out, format_rankings(lists, opt.space));
  out << "ranked " << lists.size() << " queries against " << gallery.rows() << " images\n";
  return kOk;
}

inline int eval_cmd(const EvalArgs& a, std::ostream& out) {
  const auto rankings = parse_rankings(io::read_text(a.rankings));
  const FeatureSet queries = read_features(a.queries);
  const FeatureSet gallery = read_features(a.gallery);
  // Shared label space over category names of both files.
  std::map<std::string, std::int64_t> ids;
  auto id_of = [&ids](const std::string& name) {
    return ids.try_emplace(name, static_cast<std::int64_t>(ids.size())).first->second;
  };
  std::vector<std::int64_t> query_labels, gallery_labels;
  for (std::size_t r = 0; r < queries.rows(); ++r) query_labels.push_back(id_of(queries.label_name(r)));
  for (std::size_t r = 0; r < gallery.rows(); ++r) gallery_labels.push_back(id_of(gallery.label_name(r)));
  if (!a.split.empty()) {
    const SplitSpec split = read_split(a.split);
    split.validate_against(gallery, "gallery");
    std::set<std::string> unseen(split.unseen.begin(), split.unseen.end());
    for (std::size_t r = 0; r < gallery.rows(); ++r) {
      if (!unseen.contains(gallery.label_name(r))) gallery_labels[r] = -1;
    }
  }
  const auto norm = a.ap_normalization == "retrieved" ? ApNormalization::kRetrievedRelevant
                                                      : ApNormalization::kMinTotalRelevantK;
  const EvalReport report = evaluate(rankings, query_labels, gallery_labels, a.k, norm);
  const std::string table = format_report_table(report);
  if (!a.out.empty()) io::write_text(a.out, table);
  if (!a.csv.empty()) io::write_text(a.csv, format_report_csv(report));
  out << table;
  return kOk;
}

inline int gradcheck_cmd(const GradcheckArgs& a, std::ostream& out) {
  double worst = 0.0;
  for (std::uint32_t i = 0; i < a.seeds; ++i) {
    const GradCheckReport r = check_objective_gradients(a.seed + i, {}, {}, a.step);
    char line[200];
    std::snprintf(line, sizeof(line), "seed %llu  max relative error %.3e  (%s[%zu])\n",
                  static_cast<unsigned long long>(a.seed + i), r.max_relative_error,
                  r.worst_parameter.c_str(), r.worst_index);
    out << line;
    worst = std::max(worst, r.max_relative_error);
  }
  const bool ok = worst <= a.tolerance;
  char line[120];
  std::snprintf(line, sizeof(line), "max relative error %.3e vs tolerance %.1e: %s\n", worst,
                a.tolerance, ok ? "PASS" : "FAIL");
  out << line;
  return ok ? kOk : kNumerical;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Zero-shot sketch-based image retrieval over pre-extracted features", "zsr"};
  app.require_subcommand(1, 1);

  GenSynthArgs gs;
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic feature corpus and split");
  gen->add_option("--out-dir", gs.out_dir, "Output directory")->required();
  gen->add_option("--seen", gs.spec.seen_categories, "Seen categories")->capture_default_str();
  gen->add_option("--unseen", gs.spec.unseen_categories, "Unseen categories")->capture_default_str();
  gen->add_option("--images-per-category", gs.spec.images_per_category)->capture_default_str();
  gen->add_option("--sketches-per-category", gs.spec.sketches_per_category)->capture_default_str();
  gen->add_option("--structure-dim", gs.spec.structure_dim)->capture_default_str();
  gen->add_option("--appearance-dim", gs.spec.appearance_dim)->capture_default_str();
  gen->add_option("--image-dim", gs.spec.image_dim)->capture_default_str();
  gen->add_option("--sketch-dim", gs.spec.sketch_dim)->capture_default_str();
  gen->add_option("--noise", gs.spec.noise)->capture_default_str();
  gen->add_option("--seed", gs.spec.seed)->capture_default_str();
  gen->add_option("--holdout-per-category", gs.spec.holdout_images_per_category,
                  "Extra seen-category images written to holdout_images.sfv")
      ->capture_default_str();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a model on the seen categories");
  trn->add_option("--images", ta.images)->required();
  trn->add_option("--sketches", ta.sketches)->required();
  trn->add_option("--split", ta.split)->required();
  trn->add_option("--out", ta.out, "Checkpoint path")->required();
  trn->add_option("--config", ta.config, "key=value config file; flags override it");
  trn->add_option("--disable", ta.disable, "Loss term to turn off (cls, or, kl, l2_sk, l2_im)")
      ->check(CLI::IsMember({"cls", "or", "kl", "l2_sk", "l2_im"}));
  trn->add_flag("--quiet", ta.quiet, "No per-epoch progress");
  const std::vector<std::pair<std::string, std::string>> train_flags{
      {"--epochs", "epochs"},
      {"--batch-size", "batch_size"},
      {"--learning-rate", "learning_rate"},
      {"--seed", "seed"},
      {"--hidden", "hidden"},
      {"--structure-dim", "structure_dim"},
      {"--appearance-dim", "appearance_dim"},
      {"--latent-dim", "latent_dim"},
  };
  std::map<std::string, std::string> raw_overrides;
  for (const auto& [flag, key] : train_flags) {
    trn->add_option(flag, raw_overrides[key]);
  }
  trn->add_flag_callback("--squared-l2", [&ta] { ta.overrides["squared_l2"] = "1"; },
                         "Use squared L2 reconstruction losses");

  RetrieveArgs ra;
  auto* ret = app.add_subcommand("retrieve", "Rank gallery images for each sketch query");
  ret->add_option("--checkpoint", ra.checkpoint)->required();
  ret->add_option("--queries", ra.queries, "Sketch feature file")->required();
  ret->add_option("--gallery", ra.gallery, "Image feature file")->required();
  ret->add_option("--split", ra.split, "Restrict to unseen categories of this split");
  ret->add_option("--out", ra.out, "Ranking output file")->required();
  ret->add_option("--lambda1", ra.weights.lambda1)->capture_default_str();
  ret->add_option("--lambda2", ra.weights.lambda2)->capture_default_str();
  ret->add_option("--n-samples", ra.weights.n_samples)->capture_default_str();
  ret->add_option("--k", ra.k, "Entries written per query (0 = all)")->capture_default_str();
  ret->add_option("--space", ra.space)
      ->check(CLI::IsMember({"fusion", "structure", "sketch", "image"}))
      ->capture_default_str();
  ret->add_option("--seed", ra.seed)->capture_default_str();
  ret->add_option("--threads", ra.threads)->check(CLI::PositiveNumber)->capture_default_str();

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "Score a ranking file with P@K and mAP@K");
  evl->add_option("--rankings", ea.rankings)->required();
  evl->add_option("--queries", ea.queries, "Sketch feature file the rankings refer to")->required();
  evl->add_option("--gallery", ea.gallery, "Image feature file the rankings refer to")->required();
  evl->add_option("--split", ea.split, "Count only unseen-category images as the gallery");
  evl->add_option("--k", ea.k)->check(CLI::PositiveNumber)->capture_default_str();
  evl->add_option("--out", ea.out, "Text report");
  evl->add_option("--csv", ea.csv, "Per-query CSV report");
  evl->add_option("--ap-normalization", ea.ap_normalization)
      ->check(CLI::IsMember({"retrieved", "min-total"}))
      ->capture_default_str();

  GradcheckArgs ga;
  auto* gck = app.add_subcommand("gradcheck", "Finite-difference check of the training objective");
  gck->add_option("--seed", ga.seed)->capture_default_str();
  gck->add_option("--seeds", ga.seeds, "Number of consecutive seeds")->capture_default_str();
  gck->add_option("--step", ga.step, "Finite-difference step h")->capture_default_str();
  gck->add_option("--tolerance", ga.tolerance)->capture_default_str();

  std::vector<const char*> argv{"zsr"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }

  try {
    if (gen->parsed()) return gen_synth(gs, out);
    if (trn->parsed()) {
      for (const auto& [key, value] : raw_overrides) {
        if (!value.empty()) ta.overrides[key] = value;
      }
      return train_cmd(ta, out, err);
    }
    if (ret->parsed()) return retrieve_cmd(ra, out);
    if (evl->parsed()) return eval_cmd(ea, out);
    if (gck->parsed()) return gradcheck_cmd(ga, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kValidation;
}

}  // namespace zsr::cli
