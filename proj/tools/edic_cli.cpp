// Copyright 2026 The EDIC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: train, encode, decode, eval, rd-curve, bitmap.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "edic/bitstream.hpp"
#include "edic/codec.hpp"
#include "edic/error.hpp"
#include "edic/metrics.hpp"
#include "edic/network.hpp"
#include "edic/training.hpp"

namespace {

using edic::Tensor;
using json = nlohmann::json;
namespace fs = std::filesystem;

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

void apply_model_json(const json& j, edic::ModelConfig& m) {
  m.N = j.value("N", m.N);
  m.M = j.value("M", m.M);
  m.F = j.value("F", m.F);
  m.r = j.value("r", m.r);
  m.enh_channels = j.value("enh_channels", m.enh_channels);
  m.enh_blocks = j.value("enh_blocks", m.enh_blocks);
  m.res_per_block = j.value("res_per_block", m.res_per_block);
  m.use_attention = j.value("use_attention", m.use_attention);
  m.use_enhancement = j.value("use_enhancement", m.use_enhancement);
}

void apply_train_json(const json& j, edic::TrainConfig& t) {
  t.lambda = j.value("lambda", t.lambda);
  if (j.contains("metric")) t.metric = edic::parse_distortion(j.at("metric").get<std::string>());
  t.batch_size = j.value("batch_size", t.batch_size);
  t.crop_size = j.value("crop_size", t.crop_size);
  t.lr_phase1 = j.value("lr_phase1", t.lr_phase1);
  t.lr_phase2 = j.value("lr_phase2", t.lr_phase2);
  t.steps_phase1 = j.value("steps_phase1", t.steps_phase1);
  t.steps_phase2 = j.value("steps_phase2", t.steps_phase2);
  t.seed = j.value("seed", t.seed);
  t.ms_ssim_scales = j.value("ms_ssim_scales", t.ms_ssim_scales);
  t.log_every = j.value("log_every", t.log_every);
  t.eval_every = j.value("eval_every", t.eval_every);
  t.clip_grad_norm = j.value("clip_grad_norm", t.clip_grad_norm);
}

struct Loaded {
  edic::ModelWeights weights;
  edic::ModelConfig config;
  double lambda = 0.0;
};

Loaded load_model(const fs::path& path) {
  Loaded l;
  l.weights = edic::read_weights(path);
  l.config = edic::extract_config(l.weights);
  edic::validate_weights(l.config, l.weights);
  if (l.weights.contains("meta.lambda")) l.lambda = l.weights.at("meta.lambda").item();
  return l;
}

std::string csv_number(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, metric = "mse", init, log, held_out, checkpoint;
  double lambda = edic::kAnchorLambda;
  std::size_t synthetic = 100;
  std::optional<std::size_t> steps, steps2, batch, crop;
  std::optional<double> lr, lr2;
};

int run_train(const TrainArgs& a, std::uint64_t seed) {
  edic::ModelConfig model;
  edic::TrainConfig tc;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw edic::IoError("cannot open " + a.config);
    const json j = json::parse(in);
    if (j.contains("model")) apply_model_json(j.at("model"), model);
    if (j.contains("train")) apply_train_json(j.at("train"), tc);
  }
  tc.lambda = a.lambda;
  tc.metric = edic::parse_distortion(a.metric);
  tc.seed = seed;
  if (a.steps) tc.steps_phase1 = *a.steps;
  if (a.steps2) tc.steps_phase2 = *a.steps2;
  if (a.batch) tc.batch_size = *a.batch;
  if (a.crop) tc.crop_size = *a.crop;
  if (a.lr) tc.lr_phase1 = *a.lr;
  if (a.lr2) tc.lr_phase2 = *a.lr2;
  if (!a.checkpoint.empty()) tc.checkpoint = a.checkpoint;

  std::optional<edic::ModelWeights> initial;
  if (!a.init.empty()) {
    Loaded l = load_model(a.init);
    model = l.config;
    initial = std::move(l.weights);
  }
  std::vector<Tensor> data = edic::synthetic_dataset(a.synthetic, 256, seed);
  if (!a.data.empty()) {
    for (auto& img : edic::load_image_folder(a.data)) data.push_back(std::move(img));
  }
  if (data.empty()) throw edic::UsageError("no training images (use --data or --synthetic)");
  Tensor held;
  if (!a.held_out.empty()) held = edic::read_image(a.held_out);

  auto result = edic::train(data, model, tc, std::move(initial), held,
                            [](const edic::LogRow& r) {
                              std::cerr << "step " << r.step << " loss " << r.loss << " bpp "
                                        << r.bpp_est << " psnr " << r.psnr << "\n";
                            });
  result.weights.set("meta.lambda", Tensor({1}, {tc.lambda}));
  edic::write_weights(a.out, result.weights);
  if (!a.log.empty()) edic::write_log_csv(a.log, result.log);
  json summary = {{"weights", a.out},
                  {"steps", tc.steps_phase1 + tc.steps_phase2},
                  {"initial_loss", result.log.front().loss},
                  {"final_loss", result.log.back().loss}};
  if (!result.rd_points.empty()) {
    const auto& p = result.rd_points.back().second;
    summary["held_out"] = {{"bpp", p.bpp}, {"psnr_db", p.psnr_db}, {"ms_ssim", p.ms_ssim}};
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

int run_encode(const std::string& weights, const std::string& in, const std::string& out,
               unsigned threads) {
  const Loaded m = load_model(weights);
  const Tensor img = edic::read_image(in);
  const auto t0 = std::chrono::steady_clock::now();
  const edic::EncodeResult r = edic::encode_image(img, m.weights, m.config, threads);
  const double ms = elapsed_ms(t0);
  edic::write_bitstream(out, r.bitstream);
  std::cout << json{{"bytes", r.bitstream.payload_bytes()},
                    {"bpp", r.bpp()},
                    {"bpp_estimated", r.estimated_bpp()},
                    {"width", r.bitstream.width},
                    {"height", r.bitstream.height},
                    {"enc_ms", ms}}
                   .dump()
            << "\n";
  return 0;
}

int run_decode(const std::string& weights, const std::string& in, const std::string& out,
               unsigned threads) {
  const Loaded m = load_model(weights);
  const edic::Bitstream bs = edic::read_bitstream(in);
  edic::write_image(out, edic::decode_image(bs, m.weights, m.config, threads));
  return 0;
}

int run_eval(const std::string& weights, const std::string& dataset, const std::string& report,
             unsigned threads) {
  const Loaded m = load_model(weights);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dataset)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw edic::UsageError("no .png/.ppm images in " + dataset);
  std::ofstream out(report);
  if (!out) throw edic::IoError("cannot write " + report);
  out << "image,lambda,bpp_actual,bpp_estimated,psnr_db,ms_ssim,ms_ssim_db,enc_ms,dec_ms,"
         "psnr_capped\n";
  for (const auto& f : files) {
    const Tensor img = edic::read_image(f);
    auto t0 = std::chrono::steady_clock::now();
    const edic::EncodeResult r = edic::encode_image(img, m.weights, m.config, threads);
    const double enc_ms = elapsed_ms(t0);
    const auto bytes = edic::serialize_bitstream(r.bitstream);
    t0 = std::chrono::steady_clock::now();
    const Tensor rec = edic::decode_image(edic::parse_bitstream(bytes), m.weights, m.config,
                                          threads);
    const double dec_ms = elapsed_ms(t0);
    if (!std::equal(rec.data().begin(), rec.data().end(), r.reconstruction.data().begin())) {
      throw edic::DecodeError(f.string() + ": decoder diverged from encoder reconstruction");
    }
    const double pixels = static_cast<double>(img.dim(2) * img.dim(3));
    const double gap_bits = std::abs(8.0 * r.bitstream.payload_bytes() -
                                     r.estimated_bpp() * pixels);
    if (gap_bits > 0.01 * r.estimated_bpp() * pixels + 8.0 * 32) {
      throw edic::CoderError(f.string() + ": coded size deviates from the entropy estimate by " +
                             std::to_string(gap_bits) + " bits");
    }
    const double p = edic::psnr(img, rec);
    const double s = edic::ms_ssim(img, rec);
    const double sdb = edic::ms_ssim_db(s);
    out << f.filename().string() << ',' << csv_number(m.lambda) << ','
        << csv_number(r.bpp()) << ',' << csv_number(r.estimated_bpp()) << ','
        << csv_number(std::min(p, edic::kPsnrCap)) << ',' << csv_number(s) << ','
        << csv_number(std::min(sdb, edic::kPsnrCap)) << ',' << csv_number(enc_ms) << ','
        << csv_number(dec_ms) << ',' << (std::isfinite(p) ? 0 : 1) << '\n';
  }
  std::cout << json{{"report", report}, {"images", files.size()}}.dump() << "\n";
  return 0;
}

// Mean point per lambda of one eval report.
edic::RDCurve read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw edic::IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw edic::FormatError(path.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cl = col("lambda"), cb = col("bpp_actual"), cp = col("psnr_db"),
                    cm = col("ms_ssim");
  std::map<double, std::pair<edic::RDPoint, std::size_t>> acc;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < header.size()) throw edic::FormatError(path.string() + ": short row");
    const double lambda = std::stod(cells[cl]);
    auto& [p, n] = acc[lambda];
    p.lambda = lambda;
    p.bpp += std::stod(cells[cb]);
    p.psnr_db += std::stod(cells[cp]);
    p.ms_ssim += std::stod(cells[cm]);
    ++n;
  }
  edic::RDCurve curve;
  curve.label = path.stem().string();
  for (auto& [lambda, pn] : acc) {
    auto [p, n] = pn;
    p.bpp /= n;
    p.psnr_db /= n;
    p.ms_ssim /= n;
    curve.points.push_back(p);
  }
  // Points are in lambda order here; the rate must rise with lambda.
  curve.validate(1);
  return curve;
}

int run_rd_curve(const std::vector<std::string>& reports, const std::string& plot,
                 const std::string& quality) {
  const edic::Quality q = quality == "ms_ssim" ? edic::Quality::kMsSsimDb : edic::Quality::kPsnr;
  if (quality != "psnr" && quality != "ms_ssim") {
    throw edic::UsageError("--quality must be psnr or ms_ssim");
  }
  std::vector<edic::RDCurve> curves;
  for (const auto& r : reports) curves.push_back(read_report(r));
  json out = json::array();
  for (std::size_t i = 0; i < curves.size(); ++i) {
    json c = {{"label", curves[i].label}, {"points", json::array()}};
    for (const auto& p : curves[i].points) {
      c["points"].push_back(
          {{"lambda", p.lambda}, {"bpp", p.bpp}, {"psnr_db", p.psnr_db}, {"ms_ssim", p.ms_ssim}});
    }
    if (i > 0) c["bdbr_vs_" + curves[0].label] = edic::bdbr(curves[0], curves[i], q);
    out.push_back(c);
  }
  if (!plot.empty()) {
    std::ofstream svg(plot);
    if (!svg) throw edic::IoError("cannot write " + plot);
    svg << edic::rd_svg(curves, q);
  }
  std::cout << out.dump() << "\n";
  return 0;
}

edic::BitMap model_bitmap(const Loaded& m, const Tensor& img) {
  const edic::EncodeResult r = edic::encode_image(img, m.weights, m.config);
  return edic::bit_allocation_map(r.y_hat, r.params);
}

int run_bitmap(const std::string& weights, const std::string& in, const std::string& out,
               const std::string& diff_with) {
  const Tensor img = edic::read_image(in);
  const edic::BitMap a = model_bitmap(load_model(weights), img);
  json summary = {{"height", a.height}, {"width", a.width}, {"total_bits", a.total()}};
  edic::BitMap shown = a;
  if (!diff_with.empty()) {
    const edic::BitMap b = model_bitmap(load_model(diff_with), img);
    shown = a - b;
    summary["total_bits_other"] = b.total();
    summary["difference_bits"] = shown.total();
  }
  edic::write_bitmap(out, shown);
  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EDIC learned image codec"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  unsigned threads = 0;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", threads, "Table-construction threads (0 = all cores)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", ta.config, "JSON file with 'model' and 'train' sections")
      ->check(CLI::ExistingFile);
  train->add_option("--data", ta.data, "Folder of extra PPM/PNG training images")
      ->check(CLI::ExistingDirectory);
  train->add_option("--lambda", ta.lambda, "Rate-distortion trade-off")->capture_default_str();
  train->add_option("--metric", ta.metric, "mse | ms_ssim")->capture_default_str();
  train->add_option("--out", ta.out, "Output weight file")->required();
  train->add_option("--init", ta.init, "Fine-tune from this weight file")
      ->check(CLI::ExistingFile);
  train->add_option("--log", ta.log, "CSV training log");
  train->add_option("--held-out", ta.held_out, "Held-out image for RD points")
      ->check(CLI::ExistingFile);
  train->add_option("--checkpoint", ta.checkpoint, "Last-good weights on divergence");
  train->add_option("--synthetic", ta.synthetic, "Number of synthetic images")
      ->capture_default_str();
  train->add_option("--steps", ta.steps, "Phase-1 steps");
  train->add_option("--steps2", ta.steps2, "Phase-2 steps");
  train->add_option("--batch", ta.batch, "Batch size");
  train->add_option("--crop", ta.crop, "Crop size (multiple of 64)");
  train->add_option("--lr", ta.lr, "Phase-1 learning rate");
  train->add_option("--lr2", ta.lr2, "Phase-2 learning rate");

  std::string weights, in, out, dataset, report, plot, diff_with, quality = "psnr";
  std::vector<std::string> reports;
  auto* encode = app.add_subcommand("encode", "Compress an image");
  encode->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  encode->add_option("--in", in)->required()->check(CLI::ExistingFile);
  encode->add_option("--out", out)->required();
  auto* decode = app.add_subcommand("decode", "Decompress a bitstream");
  decode->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  decode->add_option("--in", in)->required()->check(CLI::ExistingFile);
  decode->add_option("--out", out)->required();
  auto* eval = app.add_subcommand("eval", "Code a folder of images and report RD numbers");
  eval->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--report", report)->required();
  auto* rd = app.add_subcommand("rd-curve", "Assemble RD curves and BD-rates from reports");
  rd->add_option("--reports", reports)->required()->check(CLI::ExistingFile);
  rd->add_option("--plot", plot, "SVG output");
  rd->add_option("--quality", quality, "psnr | ms_ssim")->capture_default_str();
  auto* bitmap = app.add_subcommand("bitmap", "Export a bit-allocation map");
  bitmap->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  bitmap->add_option("--in", in)->required()->check(CLI::ExistingFile);
  bitmap->add_option("--out", out)->required();
  bitmap->add_option("--diff-with", diff_with, "Second model; writes A - B")
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(ta, seed);
    if (*encode) return run_encode(weights, in, out, threads);
    if (*decode) return run_decode(weights, in, out, threads);
    if (*eval) return run_eval(weights, dataset, report, threads);
    if (*rd) return run_rd_curve(reports, plot, quality);
    if (*bitmap) return run_bitmap(weights, in, out, diff_with);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
