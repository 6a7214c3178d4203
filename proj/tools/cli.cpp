#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "mmvs/io.hpp"
#include "mmvs/param_set.hpp"
#include "mmvs/serialize.hpp"

namespace mmvs::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

DomainSpec MakeDomain(int id, const char* name, TextureFamily tex, Eigen::Vector3d light, double intensity,
                      double ambient, double noise) {
  DomainSpec d;
  d.id = id;
  d.name = name;
  d.texture = tex;
  d.light_dir = light;
  d.intensity = intensity;
  d.ambient = ambient;
  d.noise_sigma = noise;
  return d;
}

std::string Hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

uint64_t FileHash(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw io::IoError("cannot read " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string head = "blob " + std::to_string(bytes.size()) + '\0';
  return Fnv1a(bytes.data(), bytes.size(), Fnv1a(head.data(), head.size()));
}

std::string UtcNow() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RequireExists(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw io::IoError(std::string(what) + " not found: " + path);
}

// Line-per-event progress output.
void Progress(std::ostream& out, json j) { out << j.dump() << '\n' << std::flush; }

Tensor As2d(const Tensor& t) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.dim(0) == 1) {
    return Tensor::FromValues({t.dim(1), t.dim(2)}, std::vector<double>(t.values().begin(), t.values().end()));
  }
  throw io::IoError("expected a single-channel map, got " + ShapeString(t.shape()));
}

void CheckFinite(const Tensor& t, const std::string& what) {
  for (double v : t.values())
    if (!std::isfinite(v)) throw NumericalError("non-finite value in " + what);
}

std::string ViewName(const char* stem, int id, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d.%s", stem, id, ext);
  return buf;
}

std::string CheckpointFile(const std::string& path) {
  RequireExists(path, "checkpoint");
  return fs::is_directory(path) ? (fs::path(path) / "params.mmvs").string() : path;
}

// Shared state of one subcommand invocation.
struct Invocation {
  std::string command;
  std::vector<std::string> argv;
  RunConfig cfg;
  fs::path out;
  std::map<std::string, std::string> inputs;  // role -> path
  std::vector<std::string> outputs;           // relative to out
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::string started_at = UtcNow();

  std::string Out(const std::string& name) {
    outputs.push_back(name);
    return (out / name).string();
  }

  void WriteManifest() const {
    json in = json::object();
    uint64_t combined = Fnv1a(nullptr, 0);
    for (const auto& [role, path] : inputs) {
      const uint64_t h = ContentHash(path);
      in[role] = {{"path", path}, {"hash", Hex(h)}};
      combined = Fnv1a(role.data(), role.size(), combined);
      combined = Fnv1a(&h, sizeof h, combined);
    }
    json outs = json::object();
    for (const auto& name : outputs) outs[name] = Hex(FileHash(out / name));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const json m = {{"format", "mmvs-run-manifest"},
                    {"command", command},
                    {"argv", argv},
                    {"config", ToJson(cfg)},
                    {"config_hash", Hex(ConfigHash(cfg))},
                    {"seed", cfg.seed},
                    {"inputs", in},
                    {"input_hash", Hex(combined)},
                    {"outputs", outs},
                    {"started_at", started_at},
                    {"timings", {{"total_s", secs}}}};
    std::ofstream os(out / "manifest.json");
    os << m.dump(2) << '\n';
    if (!os) throw io::IoError("cannot write " + (out / "manifest.json").string());
  }
};

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw io::IoError("cannot write " + path);
}

void CmdGenData(Invocation& inv, bool ppm, std::ostream& out) {
  const SceneDataset ds = MakeDataset(inv.cfg.dataset);
  SaveDataset(ds, inv.cfg.dataset, inv.out.string(), ppm);
  inv.outputs.push_back("dataset.json");
  Progress(out, {{"event", "gen-data"},
                 {"scenes", ds.scenes.size()},
                 {"train", ds.train.size()},
                 {"val", ds.val.size()},
                 {"target_train", ds.target_train.size()},
                 {"target_test", ds.target_test.size()}});
}

SceneDataset LoadData(Invocation& inv, const std::string& dir) {
  RequireExists(dir, "dataset");
  inv.inputs["data"] = dir;
  return LoadDataset(dir).dataset;
}

void CmdMetaTrain(Invocation& inv, const std::string& data, bool resume, std::ostream& out) {
  const SceneDataset ds = LoadData(inv, data);
  const RunConfig& c = inv.cfg;
  MetaTrainOptions opt;
  opt.checkpoint_dir = inv.out.string();
  opt.loss_log = (inv.out / "losses.csv").string();
  opt.resume = resume;
  if (!resume || !HasTrainState(opt.checkpoint_dir)) fs::remove(opt.loss_log);
  opt.on_step = [&](const MetaStepLog& s) {
    double self = 0;
    for (double v : s.self_losses) self += v;
    if (!s.self_losses.empty()) self /= static_cast<double>(s.self_losses.size());
    if (!std::isfinite(s.sup_loss) || !std::isfinite(self)) throw NumericalError("non-finite meta loss");
    Progress(out, {{"event", "meta_step"}, {"iteration", s.iteration}, {"domain", s.domain_id}, {"self", self},
                   {"sup", s.sup_loss}});
  };
  const TrainState st = MetaTrain(InitParams(c.network, c.seed), ds, c.meta, c.network, c.loss, opt);
  for (const char* f : {"params.mmvs", "optimizer.mmvs", "state.json", "losses.csv"}) inv.outputs.push_back(f);
  Progress(out, {{"event", "meta_done"},
                 {"iterations", st.iteration},
                 {"converged", st.converged},
                 {"best_iteration", st.best_iteration},
                 {"params_hash", Hex(st.params.Hash())}});
}

void CmdFineTune(Invocation& inv, const std::string& data, const std::string& ckpt, std::ostream& out) {
  const SceneDataset ds = LoadData(inv, data);
  const std::string file = CheckpointFile(ckpt);
  inv.inputs["checkpoint"] = file;
  if (ds.target_train.empty()) throw ConfigError("dataset has no target_train scenes to fine-tune on");
  const ParamSet theta = ParamSet::Load(file);
  const std::string log_path = inv.Out("losses.csv");
  fs::remove(log_path);
  LossLog log(log_path);
  const TrainResult r = FineTune(theta, ds.target_train, inv.cfg.fine_tune, inv.cfg.network, inv.cfg.loss, &log);
  for (size_t i = 0; i < r.losses.size(); ++i) {
    if (!std::isfinite(r.losses[i])) throw NumericalError("non-finite fine-tune loss");
    Progress(out, {{"event", "fine_tune_step"}, {"step", i + 1}, {"self", r.losses[i]}});
  }
  r.params.Save(inv.Out("params.mmvs"));
  Progress(out, {{"event", "fine_tune_done"}, {"steps", r.losses.size()}, {"params_hash", Hex(r.params.Hash())}});
}

const SceneRecord& PickScene(const SceneDataset& ds, int scene_id) {
  if (scene_id >= 0) {
    for (const auto& rec : ds.scenes)
      if (rec.scene_id == scene_id) return rec;
    throw ConfigError("scene " + std::to_string(scene_id) + " is not in the dataset");
  }
  for (Split s : {Split::kTargetTest, Split::kTargetTrain})
    for (const auto& rec : ds.scenes)
      if (rec.split == s) return rec;
  throw ConfigError("dataset has no target scenes");
}

void CmdPredict(Invocation& inv, const std::string& data, const std::string& ckpt, int scene_id, std::ostream& out) {
  const SceneDataset ds = LoadData(inv, data);
  const std::string file = CheckpointFile(ckpt);
  inv.inputs["checkpoint"] = file;
  const ParamSet theta = ParamSet::Load(file);
  const SceneRecord& rec = PickScene(ds, scene_id);
  const DomainSpec& dom = ds.Domain(rec.domain_id);
  const int n = inv.cfg.test_neighbors;
  if (n >= static_cast<int>(rec.views.size())) {
    throw ConfigError("test_neighbors = " + std::to_string(n) + " needs more than " +
                      std::to_string(rec.views.size()) + " views");
  }
  std::vector<Camera> cams;
  for (const auto& v : rec.views) cams.push_back(v.camera);

  NoGradGuard no_grad;
  for (size_t r = 0; r < rec.views.size(); ++r) {
    MultiViewSample s;
    s.scene_id = rec.scene_id;
    s.domain_id = rec.domain_id;
    s.ref = rec.views[r];
    for (int k : NearestViews(cams, static_cast<int>(r), n)) s.neighbors.push_back(rec.views[k]);
    s.depth_min = dom.depth_min;
    s.depth_max = dom.depth_max;
    const DepthPrediction pred = Forward(theta, s, inv.cfg.network);
    CheckFinite(pred.depth, "predicted depth");
    CheckFinite(pred.prob, "probability map");

    const int64_t hw = pred.depth.numel();
    std::vector<double> mask(static_cast<size_t>(hw), 1.0);
    if (!pred.conf_masks.empty()) {
      std::fill(mask.begin(), mask.end(), 0.0);
      for (const Tensor& m : pred.conf_masks) {
        const auto mv = m.values();
        for (int64_t i = 0; i < hw; ++i) mask[i] += mv[i];
      }
      for (double& v : mask) v /= static_cast<double>(pred.conf_masks.size());
    }
    const int id = rec.views[r].view_id;
    io::WritePfm(inv.Out(ViewName("depth", id, "pfm")), pred.depth);
    io::WritePfm(inv.Out(ViewName("prob", id, "pfm")), pred.prob);
    io::WritePfm(inv.Out(ViewName("mask", id, "pfm")), Tensor::FromValues(pred.depth.shape(), std::move(mask)));
    io::WritePfm(inv.Out(ViewName("image", id, "pfm")), pred.ref_image);
    const double f = static_cast<double>(pred.depth.dim(1)) / rec.views[r].camera.width;
    io::WriteCameraText(inv.Out(ViewName("cam", id, "txt")), {rec.views[r].camera.Scaled(f), dom.depth_min, dom.depth_max});

    double mean_prob = 0;
    for (double v : pred.prob.values()) mean_prob += v;
    Progress(out, {{"event", "predict_view"}, {"view", id}, {"mean_prob", mean_prob / static_cast<double>(hw)}});
  }
  WriteText(inv.Out("scene.json"), SceneToJson(rec.spec));
  Progress(out, {{"event", "predict_done"}, {"scene", rec.scene_id}, {"views", rec.views.size()}});
}

// View ids of the depth_XXXX.pfm files in a prediction directory.
std::vector<int> PredictedViews(const fs::path& dir) {
  static const std::regex kName(R"(depth_(\d+)\.pfm)");
  std::vector<int> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, kName)) ids.push_back(std::stoi(m[1]));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw io::IoError("no depth_XXXX.pfm files in " + dir.string());
  return ids;
}

io::CameraFile ReadViewCamera(const fs::path& dir, int id, const Tensor& depth) {
  return io::ReadCameraText((dir / ViewName("cam", id, "txt")).string(), static_cast<int>(depth.dim(1)),
                            static_cast<int>(depth.dim(0)));
}

void CmdFuse(Invocation& inv, const std::string& in, std::ostream& out) {
  RequireExists(in, "prediction directory");
  inv.inputs["predictions"] = in;
  const fs::path dir(in);
  std::vector<FusionView> views;
  for (int id : PredictedViews(dir)) {
    FusionView v;
    v.view_id = id;
    v.depth = As2d(io::ReadPfm((dir / ViewName("depth", id, "pfm")).string()));
    v.prob = As2d(io::ReadPfm((dir / ViewName("prob", id, "pfm")).string()));
    const fs::path mask = dir / ViewName("mask", id, "pfm");
    if (fs::exists(mask)) v.conf = As2d(io::ReadPfm(mask.string()));
    v.image = io::ReadPfm((dir / ViewName("image", id, "pfm")).string());
    v.camera = ReadViewCamera(dir, id, v.depth).camera;
    views.push_back(std::move(v));
  }
  const PointCloud cloud = Fuse(views, inv.cfg.fusion);
  WritePly(cloud, inv.Out("fused.ply"));
  Progress(out, {{"event", "fuse_done"}, {"views", views.size()}, {"points", cloud.size()}});
}

void CmdEval(Invocation& inv, const std::string& ply, const std::string& gt, std::ostream& out) {
  RequireExists(ply, "point cloud");
  RequireExists(gt, "ground truth");
  inv.inputs["estimate"] = ply;
  inv.inputs["ground_truth"] = gt;
  const auto est = ReadPly(ply).Positions();
  std::vector<Eigen::Vector3d> gt_points;
  json extra = json::object();
  if (fs::is_directory(gt)) {
    const fs::path dir(gt);
    std::ifstream ss(dir / "scene.json");
    if (!ss) throw io::IoError("cannot open " + (dir / "scene.json").string());
    std::stringstream buf;
    buf << ss.rdbuf();
    const SceneSpec scene = SceneFromJson(buf.str());
    std::vector<Camera> cams;
    double dmin = 0, dmax = 0;
    for (int id : PredictedViews(dir)) {
      const Tensor depth = As2d(io::ReadPfm((dir / ViewName("depth", id, "pfm")).string()));
      const io::CameraFile cf = ReadViewCamera(dir, id, depth);
      cams.push_back(cf.camera);
      dmin = cf.depth_min;
      dmax = cf.depth_max;
    }
    gt_points = GroundTruthCloud(scene, cams, inv.cfg.eval.gt_factor);
    extra["depth_range"] = dmax - dmin;
    extra["gt_source"] = "scene";
  } else {
    gt_points = ReadPly(gt).Positions();
    extra["gt_source"] = "ply";
  }
  const EvalReport rep = Evaluate(est, gt_points, inv.cfg.eval);
  json j = ToJson(rep);
  j.update(extra);
  WriteText(inv.Out("report.json"), j.dump(2) + "\n");
  const std::string table = FormatTable(rep);
  WriteText(inv.Out("report.txt"), table);
  out << table;
  json line = {{"event", "eval_done"}, {"accuracy", j["accuracy"]}, {"completeness", j["completeness"]},
               {"overall", j["overall"]}};
  if (extra.contains("depth_range")) line["depth_range"] = extra["depth_range"];
  Progress(out, line);
}

}  // namespace

void RunConfig::SyncSeeds() {
  dataset.seed = seed;
  meta.seed = seed;
  fine_tune.seed = seed;
}

RunConfig PresetConfig(const std::string& name) {
  if (name != "paper" && name != "desk") throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
  RunConfig c;
  c.preset = name;
  c.dataset.train_domains = {
      MakeDomain(0, "checker", TextureFamily::kChecker, {0.3, -0.5, -1.0}, 0.8, 0.3, 0.01),
      MakeDomain(1, "stripes", TextureFamily::kStripes, {-0.4, -0.3, -1.0}, 0.9, 0.2, 0.01),
      MakeDomain(2, "noise_cool", TextureFamily::kValueNoise, {0.1, 0.6, -1.0}, 0.7, 0.35, 0.015),
  };
  c.dataset.target_domain = MakeDomain(3, "target", TextureFamily::kValueNoise, {0.6, -0.2, -1.0}, 1.0, 0.15, 0.02);
  c.dataset.num_neighbors = 2;

  // Published setup: 640x512 input, 160x128 output, 256 hypotheses.
  c.dataset.rig.width = 640;
  c.dataset.rig.height = 512;
  c.dataset.rig.output_factor = 4;
  c.network.feature_channels = 32;
  c.network.reg_channels = 8;
  c.network.reg_levels = 3;
  c.network.mask_channels = 16;
  c.network.num_depths = 256;
  c.loss.gamma_photo = 5.0;
  c.loss.gamma_ssim = 1.0;
  c.loss.gamma_smooth = 0.01;
  c.meta.k = 3;
  c.meta.alpha = 1e-4;
  c.meta.beta = 1e-4;
  c.fine_tune.lr = 1e-7;
  c.fine_tune.batch_size = 4;
  c.test_neighbors = 4;
  c.fusion.reproj_px = 1.0;
  c.fusion.rel_depth = 0.01;
  c.fusion.prob_threshold = 0.8;
  c.fusion.min_views = 3;
  // 20 mm / 1 mm / 2 mm of a ~510 mm object depth range, scaled to a 4-unit range.
  c.eval.max_dist = 0.16;
  c.eval.thresholds = {0.008, 0.016};

  if (name == "desk") {
    c.dataset.rig = RigSpec{};
    c.network = NetworkConfig{};
    c.meta.alpha = 1e-3;
    c.meta.beta = 1e-3;
    c.meta.outer_optimizer = OptimizerKind::kAdam;
    c.meta.max_iterations = 200;
    c.meta.patience = 0;
    c.fine_tune.lr = 1e-4;
    c.fine_tune.steps = 50;
    c.fine_tune.optimizer = OptimizerKind::kAdam;
    c.test_neighbors = 4;
    c.fusion.min_views = 2;
    c.eval.max_dist = 1.0;
    c.eval.thresholds = {0.05, 0.1};
  }
  c.SyncSeeds();
  return c;
}

RunConfig RunConfigFromJson(const json& j, const std::optional<std::string>& preset_override) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  std::string preset = "desk";
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("config.preset: expected a string");
    preset = j["preset"].get<std::string>();
  }
  if (preset_override) preset = *preset_override;
  RunConfig c = PresetConfig(preset);
  try {
    StrictObject o(j, "config");
    std::string ignored;
    o.Get("preset", ignored);
    o.Get("seed", c.seed);
    o.Get("test_neighbors", c.test_neighbors);
    if (const json* s = o.Child("dataset")) c.dataset = DatasetConfigFromJson(*s, "config.dataset", c.dataset);
    if (const json* s = o.Child("network")) c.network = NetworkConfigFromJson(*s, "config.network", c.network);
    if (const json* s = o.Child("loss")) c.loss = LossWeightsFromJson(*s, "config.loss", c.loss);
    if (const json* s = o.Child("meta")) c.meta = MetaConfigFromJson(*s, "config.meta", c.meta);
    if (const json* s = o.Child("fine_tune")) c.fine_tune = TrainConfigFromJson(*s, "config.fine_tune", c.fine_tune);
    if (const json* s = o.Child("fusion")) c.fusion = FusionConfigFromJson(*s, "config.fusion", c.fusion);
    if (const json* s = o.Child("eval")) c.eval = EvalConfigFromJson(*s, "config.eval", c.eval);
    o.Finish();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.test_neighbors < 1) throw ConfigError("config.test_neighbors must be >= 1");
  c.SyncSeeds();
  return c;
}

json ToJson(const RunConfig& c) {
  return {{"preset", c.preset},
          {"seed", c.seed},
          {"dataset", ToJson(c.dataset)},
          {"network", ToJson(c.network)},
          {"loss", ToJson(c.loss)},
          {"meta", ToJson(c.meta)},
          {"fine_tune", ToJson(c.fine_tune)},
          {"test_neighbors", c.test_neighbors},
          {"fusion", ToJson(c.fusion)},
          {"eval", ToJson(c.eval)}};
}

uint64_t ConfigHash(const RunConfig& c) {
  const std::string s = ToJson(c).dump();
  return Fnv1a(s.data(), s.size());
}

json ReadConfigFile(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io::IoError("cannot open config " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

uint64_t ContentHash(const std::string& path) {
  if (!fs::exists(path)) throw io::IoError("cannot hash missing path " + path);
  if (!fs::is_directory(path)) return FileHash(path);
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") {
      files.push_back(fs::relative(e.path(), path).generic_string());
    }
  }
  std::sort(files.begin(), files.end());
  uint64_t h = Fnv1a(nullptr, 0);
  for (const auto& f : files) {
    const uint64_t fh = FileHash(fs::path(path) / f);
    h = Fnv1a(f.data(), f.size() + 1, h);
    h = Fnv1a(&fh, sizeof fh, h);
  }
  return h;
}

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised multi-view stereo with meta-learned initialization"};
  app.require_subcommand(1);

  struct Common {
    std::string config, out, preset;
    std::optional<uint64_t> seed;
  };
  std::map<std::string, Common> common;
  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    Common& c = common[name];
    sub->add_option("--config", c.config, "JSON run config");
    sub->add_option("--seed", c.seed, "overrides the config seed");
    sub->add_option("--out", c.out, "output directory")->required();
    sub->add_option("--preset", c.preset, "base preset")->check(CLI::IsMember({"desk", "paper"}));
    return sub;
  };

  std::string data, ckpt, in_dir, ply, gt;
  bool ppm = false, resume = false;
  int scene = -1;
  add("gen-data", "render a synthetic multi-domain dataset")->add_flag("--ppm", ppm, "8-bit PPM images");
  CLI::App* meta = add("meta-train", "meta-train the base parameters");
  meta->add_option("--data", data, "dataset directory")->required();
  meta->add_flag("--resume", resume, "continue from the checkpoint in --out");
  CLI::App* ft = add("fine-tune", "self-supervised fine-tuning on the target-domain training scenes");
  ft->add_option("--data", data, "dataset directory")->required();
  ft->add_option("--checkpoint", ckpt, "params file or checkpoint directory")->required();
  CLI::App* pred = add("predict", "depth, probability and mask maps for one scene");
  pred->add_option("--data", data, "dataset directory")->required();
  pred->add_option("--checkpoint", ckpt, "params file or checkpoint directory")->required();
  pred->add_option("--scene", scene, "scene id; default: first target test scene");
  CLI::App* fuse = add("fuse", "fuse predicted depth maps into a PLY point cloud");
  fuse->add_option("--in", in_dir, "prediction directory")->required();
  CLI::App* ev = add("eval", "accuracy / completeness / F-score report");
  ev->add_option("--ply", ply, "estimated point cloud")->required();
  ev->add_option("--gt", gt, "GT PLY or a prediction directory (scene.json + cameras)")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  Invocation inv;
  inv.command = app.get_subcommands().front()->get_name();
  inv.argv = args;
  const Common& c = common[inv.command];
  try {
    try {
      const json j = c.config.empty() ? json::object() : ReadConfigFile(c.config);
      inv.cfg = RunConfigFromJson(j, c.preset.empty() ? std::nullopt : std::optional<std::string>(c.preset));
      if (c.seed) {
        inv.cfg.seed = *c.seed;
        inv.cfg.SyncSeeds();
      }
      if (!c.config.empty()) inv.inputs["config"] = c.config;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    inv.out = c.out;
    fs::create_directories(inv.out);
    WriteText(inv.Out("config.json"), ToJson(inv.cfg).dump(2) + "\n");
    Progress(out, {{"event", "start"}, {"command", inv.command}, {"config_hash", Hex(ConfigHash(inv.cfg))},
                   {"seed", inv.cfg.seed}});

    if (inv.command == "gen-data") CmdGenData(inv, ppm, out);
    else if (inv.command == "meta-train") CmdMetaTrain(inv, data, resume, out);
    else if (inv.command == "fine-tune") CmdFineTune(inv, data, ckpt, out);
    else if (inv.command == "predict") CmdPredict(inv, data, ckpt, scene, out);
    else if (inv.command == "fuse") CmdFuse(inv, in_dir, out);
    else CmdEval(inv, ply, gt, out);

    inv.WriteManifest();
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const io::IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kOther;
  }
}

}  // namespace mmvs::cli
