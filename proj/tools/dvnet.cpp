#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dvnet/ivote/ivote.hpp"
#include "dvnet/net/plan.hpp"
#include "dvnet/phantom/evaluate.hpp"
#include "dvnet/pipeline/dataset.hpp"
#include "dvnet/pipeline/pipeline.hpp"
#include "dvnet/train/trainer.hpp"
#include "dvnet/vessel/tracer.hpp"

using namespace dvnet;

namespace {

struct Common {
  std::string config = "desk";
  std::string checkpoint;
  std::int64_t tile = 128;
  std::int64_t overlap = 32;
  std::uint64_t seed = 1;
  int threads = 1;
  bool deterministic = false;
};

/// A preset name or a key=value file.
NetworkConfig resolve_config(const std::string& spec) {
  if (std::filesystem::is_regular_file(spec)) return NetworkConfig::load(spec);
  return NetworkConfig::preset(spec);
}

/// Volumes in [0, 1]: 8-bit data is scaled by 1/255.
Volume<float> load_intensities(const std::string& path) {
  if (std::filesystem::is_directory(path)) return normalized(load_slices(path));
  const auto header = VolumeHeader::from_text(read_text_file(header_path(path), "volume"));
  return header.type == VoxelType::uint8 ? normalized(load_volume<std::uint8_t>(path)) : load_volume<float>(path);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PipelineParams pipeline_params(const Common& c) {
  PipelineParams p;
  p.tile = {c.tile, c.tile, c.tile};
  p.overlap = c.overlap;
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense volumetric segmentation of cells and microvessels"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", common.deterministic, "Thread-count independent reductions");
  app.add_option("--seed", common.seed, "Random seed");

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Preset (v1, v2, v3, v3-2d, desk) or key=value file")
        ->capture_default_str();
  };
  auto add_tiling = [&](CLI::App* sub) {
    sub->add_option("--tile", common.tile, "Tile edge in voxels")->capture_default_str();
    sub->add_option("--overlap", common.overlap, "Tile overlap in voxels")->capture_default_str();
  };

  // plan
  auto* plan = app.add_subcommand("plan", "Print the layer plan of a configuration");
  add_config(plan);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom with ground truth");
  std::string phantom_params, phantom_out;
  phantom->add_option("--params", phantom_params, "key=value phantom parameter file");
  phantom->add_option("--out", phantom_out, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a network");
  add_config(train_cmd);
  train_cmd->add_option("--checkpoint", common.checkpoint, "Checkpoint to write")->required();
  std::vector<std::string> train_dirs, val_dirs;
  std::size_t train_phantoms = 0, val_phantoms = 0;
  std::string train_phantom_params, history_path;
  TrainOptions topt;
  std::vector<std::int64_t> crop{32, 32, 32};
  std::string loss_name = "dice";
  bool resume = false;
  train_cmd->add_option("--data", train_dirs, "Sample directories (image.raw, labels.raw)");
  train_cmd->add_option("--validation", val_dirs, "Validation sample directories");
  train_cmd->add_option("--phantoms", train_phantoms, "Generate this many training phantoms");
  train_cmd->add_option("--validation-phantoms", val_phantoms, "Generate this many validation phantoms");
  train_cmd->add_option("--phantom-params", train_phantom_params, "key=value phantom parameter file");
  train_cmd->add_option("--iterations", topt.iterations)->capture_default_str();
  train_cmd->add_option("--batch", topt.batch_size)->capture_default_str();
  train_cmd->add_option("--crop", crop, "Crop extents z y x")->expected(3);
  train_cmd->add_option("--loss", loss_name, "dice or ce")->check(CLI::IsMember({"dice", "ce"}));
  train_cmd->add_option("--lr", topt.adam.learning_rate)->capture_default_str();
  train_cmd->add_option("--validate-every", topt.validate_every)->capture_default_str();
  train_cmd->add_option("--history", history_path, "CSV of per-iteration metrics");
  train_cmd->add_flag("--no-augment", [&](std::int64_t) { topt.augment = false; }, "Crops only");
  train_cmd->add_flag("--resume", resume, "Start from the existing checkpoint");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Tiled segmentation of a volume");
  std::string input, out_dir;
  predict_cmd->add_option("--checkpoint", common.checkpoint)->required();
  predict_cmd->add_option("--input", input, "Raw volume or slice directory")->required();
  predict_cmd->add_option("--out", out_dir, "Output directory")->required();
  add_tiling(predict_cmd);

  // detect-cells
  auto* cells_cmd = app.add_subcommand("detect-cells", "Cell centers from a cell probability volume");
  std::string cells_out;
  IVoteParams ivp;
  int rmax = 6;
  cells_cmd->add_option("--input", input, "Cell probability volume")->required();
  cells_cmd->add_option("--out", cells_out, "Cell CSV")->required();
  cells_cmd->add_option("--rmax", rmax, "Largest cell radius in voxels")->capture_default_str();
  cells_cmd->add_option("--sigma", ivp.sigma)->capture_default_str();
  cells_cmd->add_option("--threshold", ivp.threshold_fraction, "Fraction of the peak vote")->capture_default_str();

  // trace-vessels
  auto* vessels_cmd = app.add_subcommand("trace-vessels", "Vessel graph from a vessel probability volume");
  std::string graph_out, summary_out;
  TracerParams tp;
  vessels_cmd->add_option("--input", input, "Vessel probability volume")->required();
  vessels_cmd->add_option("--out", graph_out, "Graph file")->required();
  vessels_cmd->add_option("--summary", summary_out, "Graph summary JSON");
  vessels_cmd->add_option("--threshold", tp.threshold)->capture_default_str();

  // pipeline
  auto* pipeline_cmd = app.add_subcommand("pipeline", "Segmentation, cell detection and vessel tracing");
  pipeline_cmd->add_option("--checkpoint", common.checkpoint)->required();
  pipeline_cmd->add_option("--input", input, "Raw volume or slice directory")->required();
  pipeline_cmd->add_option("--out", out_dir, "Output directory")->required();
  pipeline_cmd->add_option("--rmax", rmax, "Largest cell radius in voxels")->capture_default_str();
  add_tiling(pipeline_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Compare predictions with ground truth");
  std::string pred_cells, truth_cells, pred_graph, truth_graph, pred_labels, truth_labels, report;
  double match_dist = 0, sigma = 2.0;
  eval_cmd->add_option("--cells", pred_cells, "Predicted cell CSV");
  eval_cmd->add_option("--truth-cells", truth_cells, "True cell CSV");
  eval_cmd->add_option("--match-dist", match_dist, "Cell match distance (default: half the mean true radius)");
  eval_cmd->add_option("--vessels", pred_graph, "Predicted vessel graph");
  eval_cmd->add_option("--truth-vessels", truth_graph, "True vessel graph");
  eval_cmd->add_option("--sigma", sigma, "Centerline match distance")->capture_default_str();
  eval_cmd->add_option("--labels", pred_labels, "Predicted label volume");
  eval_cmd->add_option("--truth-labels", truth_labels, "True label volume");
  eval_cmd->add_option("--report", report, "Write the CSV report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    execution().threads = common.threads;
    execution().deterministic = common.deterministic;
    const auto t0 = std::chrono::steady_clock::now();

    if (*plan) {
      print_plan(std::cout, plan_architecture(resolve_config(common.config)));
    } else if (*phantom) {
      PhantomParams p;
      if (!phantom_params.empty()) p = PhantomParams::from_text(read_text_file(phantom_params, "phantom"));
      const auto ph = gen_phantom(p, common.seed);
      save_phantom(ph, phantom_out);
      std::cout << "phantom: " << ph.cells.size() << " cells, " << ph.vessels.edges.size() << " vessel segments -> "
                << phantom_out << '\n';
    } else if (*train_cmd) {
      PhantomParams pp;
      if (!train_phantom_params.empty()) pp = PhantomParams::from_text(read_text_file(train_phantom_params, "phantom"));
      std::vector<Sample> data, validation;
      for (const auto& d : train_dirs) data.push_back(load_sample_dir(d));
      for (const auto& d : val_dirs) validation.push_back(load_sample_dir(d));
      // generated validation phantoms use seeds disjoint from the training ones
      auto gen_train = phantom_samples(pp, train_phantoms, common.seed * 1000);
      auto gen_val = phantom_samples(pp, val_phantoms, common.seed * 1000 + 500);
      data.insert(data.end(), gen_train.begin(), gen_train.end());
      validation.insert(validation.end(), gen_val.begin(), gen_val.end());
      require(!data.empty(), "train", "no training data: pass --data or --phantoms");

      auto net = resume ? load_network<float>(common.checkpoint) : build_network<float>(resolve_config(common.config), common.seed);
      topt.seed = common.seed;
      topt.crop = Shape(crop.begin(), crop.end());
      topt.loss = loss_name == "ce" ? LossKind::cross_entropy : LossKind::dice;
      topt.checkpoint_path = common.checkpoint;
      topt.history_path = history_path;
      topt.on_iteration = [&](const HistoryRow& r) {
        if (r.iteration % 10 == 0 || r.iteration + 1 == topt.iterations)
          std::cout << "iter " << r.iteration << " lr " << r.learning_rate << " loss " << r.loss << " acc "
                    << r.accuracy << " mIoU " << r.mean_iou << " (" << seconds_since(t0) << " s)" << std::endl;
      };
      std::cout << "training " << count_parameters(net) << " parameters on " << data.size() << " samples" << std::endl;
      const auto result = train(net, data, validation, topt);
      for (const auto& [it, iou] : result.validation) std::cout << "validation iter " << it << " mIoU " << iou << '\n';
      std::cout << "checkpoint -> " << common.checkpoint << '\n';
    } else if (*predict_cmd) {
      const auto net = load_network<float>(common.checkpoint);
      const auto seg = segment(net, load_intensities(input), pipeline_params(common));
      PipelineResult r;
      r.segmentation = seg;
      std::filesystem::create_directories(out_dir);
      save_volume(seg.labels, (std::filesystem::path(out_dir) / "labels.raw").string());
      for (std::size_t c = 0; c < seg.probabilities.size(); ++c)
        save_volume(seg.probabilities[c],
                    (std::filesystem::path(out_dir) / ("prob_" + class_name(static_cast<int>(c)) + ".raw")).string());
      std::cout << "predicted " << seg.tiles << " tiles in " << seconds_since(t0) << " s -> " << out_dir << '\n';
    } else if (*cells_cmd) {
      const auto cells = detect_cells(load_intensities(input), rmax, ivp);
      save_cells(cells, cells_out);
      std::cout << cells.size() << " cells -> " << cells_out << '\n';
    } else if (*vessels_cmd) {
      const auto g = build_graph(load_intensities(input), tp);
      save_graph(g, graph_out);
      if (!summary_out.empty()) {
        std::ofstream js(summary_out);
        require(static_cast<bool>(js), "trace", "cannot write " + summary_out);
        js << summary_json(summarize(g));
      }
      std::cout << g.vertices.size() << " vertices, " << g.edges.size() << " edges -> " << graph_out << '\n';
    } else if (*pipeline_cmd) {
      const auto net = load_network<float>(common.checkpoint);
      auto p = pipeline_params(common);
      p.cell_max_radius = rmax;
      const auto r = run_pipeline(net, load_intensities(input), p);
      write_pipeline_outputs(r, out_dir);
      std::cout << r.segmentation.tiles << " tiles, " << r.cells.size() << " cells, " << r.vessels.edges.size()
                << " vessel segments in " << seconds_since(t0) << " s -> " << out_dir << '\n';
    } else if (*eval_cmd) {
      std::ostringstream csv;
      bool any = false;
      if (!pred_cells.empty() || !truth_cells.empty()) {
        require(!pred_cells.empty() && !truth_cells.empty(), "evaluate", "--cells and --truth-cells go together");
        const auto truth = load_cells(truth_cells);
        const double d = match_dist > 0 ? match_dist : default_match_distance(truth);
        csv << match_report_csv("cells", eval_cells(load_cells(pred_cells), truth, d));
        any = true;
      }
      if (!pred_graph.empty() || !truth_graph.empty()) {
        require(!pred_graph.empty() && !truth_graph.empty(), "evaluate", "--vessels and --truth-vessels go together");
        csv << match_report_csv("vessels", eval_vessels(load_graph(pred_graph), load_graph(truth_graph), sigma));
        any = true;
      }
      if (!pred_labels.empty() || !truth_labels.empty()) {
        require(!pred_labels.empty() && !truth_labels.empty(), "evaluate", "--labels and --truth-labels go together");
        const auto a = load_volume<std::uint8_t>(pred_labels), b = load_volume<std::uint8_t>(truth_labels);
        require(a.extents == b.extents, "evaluate", "label volumes differ in extents");
        const auto m = label_metrics(a.data, b.data, 3);
        csv << "labels,accuracy," << m.accuracy << "\nlabels,mean_iou," << m.mean_iou << '\n';
        for (std::size_t c = 0; c < m.iou.size(); ++c)
          csv << "labels,iou_" << class_name(static_cast<int>(c)) << ',' << m.iou[c] << '\n';
        any = true;
      }
      require(any, "evaluate", "nothing to evaluate: pass cells, vessels or labels with their truths");
      if (report.empty()) {
        std::cout << csv.str();
      } else {
        std::ofstream out(report);
        require(static_cast<bool>(out), "evaluate", "cannot write " + report);
        out << csv.str();
      }
    }
  } catch (const Error& e) {
    std::cerr << "error " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [" << app.get_subcommands().front()->get_name() << "] " << e.what() << '\n';
    return 1;
  }
  return 0;
}
