#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ggnet/ingestion.hpp"

using namespace ggnet;
namespace fs = std::filesystem;

namespace {

SpatioTemporalDataset sample_dataset(std::uint64_t seed, double p_missing = 0.2) {
  SpatioTemporalDataset ds = SpatioTemporalDataset::empty(3, 5, 2);
  ds.timestamps = make_daily_timestamps("20210301", 5);
  ds.coords = {{10.0, 20.0}, {-33.5, 151.2}, {48.1, -1.7}};
  Rng rng(seed);
  for (std::size_t i = 0; i < ds.values.size(); ++i) {
    ds.values[i] = rng.normal(3.0, 11.0);
    ds.mask[i] = rng.bernoulli(p_missing) ? 0 : 1;
  }
  return ds;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("date helpers") {
  CHECK(yyyymmdd_to_iso("20220131") == "2022-01-31");
  CHECK_THROWS_AS(yyyymmdd_to_iso("2022-01-31"), DataError);

  auto days = daily_range("20211230", "20220102");
  REQUIRE(days.size() == 4);
  CHECK(days[0] == "2021-12-30");
  CHECK(days[3] == "2022-01-02");
  CHECK_THROWS_AS(daily_range("20220102", "20220101"), DataError);

  auto hours = hourly_range("20220101", "20220101");
  REQUIRE(hours.size() == 24);
  CHECK(hours[0] == "2022-01-01T00:00");
  CHECK(hours[23] == "2022-01-01T23:00");

  // leap year handling
  CHECK(daily_range("20200228", "20200301").size() == 3);
  CHECK(daily_range("20210228", "20210301").size() == 2);
}

TEST_CASE("dataset save/load round trip is bit exact") {
  TempDir dir("ggnet_ds_roundtrip");
  SpatioTemporalDataset ds = sample_dataset(1);
  save_dataset(ds, dir.path.string());
  SpatioTemporalDataset back = load_dataset(dir.path.string());
  CHECK(back.N == ds.N);
  CHECK(back.T == ds.T);
  CHECK(back.D == ds.D);
  CHECK(back.mask == ds.mask);
  for (std::size_t i = 0; i < ds.values.size(); ++i) {
    if (ds.mask[i]) {
      CHECK(back.values[i] == ds.values[i]);
    } else {
      CHECK(back.values[i] == 0.0);  // masked entries are not stored
    }
  }
  CHECK(back.timestamps == ds.timestamps);
  CHECK(back.location_ids == ds.location_ids);
  CHECK(back.channel_names == ds.channel_names);
  REQUIRE(back.has_coords());
  for (std::size_t n = 0; n < ds.N; ++n) {
    CHECK(back.coords[n][0] == ds.coords[n][0]);
    CHECK(back.coords[n][1] == ds.coords[n][1]);
  }
}

TEST_CASE("save is canonical: save/load/save gives identical bytes") {
  TempDir a("ggnet_ds_canon_a"), b("ggnet_ds_canon_b");
  SpatioTemporalDataset ds = sample_dataset(2);
  save_dataset(ds, a.path.string());
  SpatioTemporalDataset loaded = load_dataset(a.path.string());
  save_dataset(loaded, b.path.string());
  CHECK(read_file(a.path / "data.csv") == read_file(b.path / "data.csv"));
  CHECK(read_file(a.path / "meta.json") == read_file(b.path / "meta.json"));
}

TEST_CASE("row counts and empty datasets") {
  TempDir dir("ggnet_ds_counts");
  SpatioTemporalDataset full = SpatioTemporalDataset::empty(2, 2, 2);
  full.timestamps = make_daily_timestamps("20200101", 2);
  for (auto& m : full.mask) m = 1;
  save_dataset(full, dir.path.string());
  std::string data = read_file(dir.path / "data.csv");
  CHECK(std::count(data.begin(), data.end(), '\n') == 9);  // header + 8 rows

  SpatioTemporalDataset none = SpatioTemporalDataset::empty(2, 2, 2);
  none.timestamps = full.timestamps;
  save_dataset(none, dir.path.string());
  data = read_file(dir.path / "data.csv");
  CHECK(data == "location_id,timestamp,channel,value,observed\n");
}

TEST_CASE("loader reports duplicate triples and unknown channels") {
  TempDir dir("ggnet_ds_errors");
  SpatioTemporalDataset ds = sample_dataset(3, 0.0);
  save_dataset(ds, dir.path.string());

  // duplicate row
  {
    std::ofstream out(dir.path / "data.csv", std::ios::app);
    out << ds.location_ids[0] << ',' << ds.timestamps[0] << ',' << ds.channel_names[0]
        << ",1.0,1\n";
  }
  try {
    load_dataset(dir.path.string());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    CHECK(std::string(e.what()).find("row") != std::string::npos);
  }

  // unknown channel
  save_dataset(ds, dir.path.string());
  {
    std::ofstream out(dir.path / "data.csv", std::ios::app);
    out << ds.location_ids[0] << ',' << ds.timestamps[0] << ",mystery,1.0,1\n";
  }
  try {
    load_dataset(dir.path.string());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("mystery") != std::string::npos);
  }
}

TEST_CASE("missing rows load as masked zeros") {
  TempDir dir("ggnet_ds_missing");
  SpatioTemporalDataset ds = sample_dataset(4, 0.0);
  ds.mask[ds.offset(1, 2, 0)] = 0;  // drop one entry
  save_dataset(ds, dir.path.string());
  SpatioTemporalDataset back = load_dataset(dir.path.string());
  CHECK(back.mask[back.offset(1, 2, 0)] == 0);
  CHECK(back.values[back.offset(1, 2, 0)] == 0.0);
}

// ------------------------------------------------------------------ POWER API

namespace {

nlohmann::json power_payload(const std::vector<std::string>& params,
                             const std::string& start, const std::string& end,
                             double base_value, double fill_at_first = std::nan("")) {
  nlohmann::json parameter;
  const auto days = daily_range(start, end);
  for (const std::string& p : params) {
    nlohmann::json series;
    for (std::size_t i = 0; i < days.size(); ++i) {
      std::string key = days[i];
      key.erase(std::remove(key.begin(), key.end(), '-'), key.end());
      double v = base_value + double(i);
      if (i == 0 && !std::isnan(fill_at_first)) v = fill_at_first;
      series[key] = v;
    }
    parameter[p] = series;
  }
  return {{"properties", {{"parameter", parameter}}}};
}

PowerRequest request_for(const std::string& id, const std::vector<std::string>& params,
                         const std::string& start, const std::string& end) {
  PowerRequest req;
  req.location_id = id;
  req.parameters = params;
  req.latitude = 10;
  req.longitude = 20;
  req.start = start;
  req.end = end;
  return req;
}

}  // namespace

TEST_CASE("empty request list yields an empty dataset") {
  FetchOptions options;
  SpatioTemporalDataset ds = fetch_power({}, options, nullptr);
  CHECK(ds.N == 0);
}

TEST_CASE("fixture replay maps fill values to missing") {
  TempDir fixtures("ggnet_fixtures");
  auto payload = power_payload({"T2M", "WS2M"}, "20220101", "20220105", 5.0, -999.0);
  std::ofstream(fixtures.path / "home.json") << payload.dump();

  FetchOptions options;
  options.fixture_dir = fixtures.path.string();
  FetchReport report;
  SpatioTemporalDataset ds = fetch_power(
      {request_for("home", {"T2M", "WS2M"}, "20220101", "20220105")}, options, &report);
  REQUIRE(ds.N == 1);
  REQUIRE(ds.T == 5);
  REQUIRE(ds.D == 2);
  CHECK(report.errors.empty());
  CHECK(ds.mask[ds.offset(0, 0, 0)] == 0);  // -999 -> missing
  CHECK(ds.mask[ds.offset(0, 1, 0)] == 1);
  CHECK(ds.value_at(0, 1, 0) == doctest::Approx(6.0));
}

TEST_CASE("a 10-parameter 30-day fixture builds a 1x30x10 tensor") {
  TempDir fixtures("ggnet_fixtures_wide");
  const std::vector<std::string> params{"T2M",        "T2M_RANGE", "T2M_MAX",
                                        "WS2M",       "RH2M",      "PRECTOTCORR",
                                        "T2MDEW",     "CLOUD_AMT", "ALLSKY_SFC_SW_DWN",
                                        "ALLSKY_SFC_LW_DWN"};
  std::ofstream(fixtures.path / "loc0.json")
      << power_payload(params, "20220101", "20220130", 1.0).dump();
  FetchOptions options;
  options.fixture_dir = fixtures.path.string();
  SpatioTemporalDataset ds =
      fetch_power({request_for("loc0", params, "20220101", "20220130")}, options,
                  nullptr);
  CHECK(ds.N == 1);
  CHECK(ds.T == 30);
  CHECK(ds.D == 10);
  for (std::uint8_t m : ds.mask) CHECK(m == 1);
}

TEST_CASE("payloads with a wrong date axis are rejected") {
  TempDir fixtures("ggnet_fixtures_axis");
  std::ofstream(fixtures.path / "loc0.json")
      << power_payload({"T2M"}, "20220101", "20220104", 1.0).dump();
  FetchOptions options;
  options.fixture_dir = fixtures.path.string();
  FetchReport report;
  fetch_power({request_for("loc0", {"T2M"}, "20220101", "20220105")}, options, &report);
  REQUIRE(report.errors.size() == 1);
  CHECK(report.errors[0].find("covers") != std::string::npos);
  CHECK_THROWS_AS(
      fetch_power({request_for("loc0", {"T2M"}, "20220101", "20220105")}, options,
                  nullptr),
      DataError);
}

TEST_CASE("http fetch against a local server with retry") {
  const auto payload = power_payload({"T2M"}, "20220101", "20220103", 2.5);
  std::atomic<int> hits{0};
  httplib::Server server;
  server.Get("/api/temporal/daily/point",
             [&](const httplib::Request& req, httplib::Response& res) {
               if (hits.fetch_add(1) == 0) {
                 res.status = 503;  // first attempt fails, the retry succeeds
                 return;
               }
               CHECK(req.get_param_value("parameters") == "T2M");
               CHECK(req.get_param_value("start") == "20220101");
               res.set_content(payload.dump(), "application/json");
             });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  FetchOptions options;
  options.base_url = "http://127.0.0.1:" + std::to_string(port);
  options.requests_per_second = 1000.0;
  options.retries = 2;
  options.backoff_base_seconds = 0.01;
  FetchReport report;
  SpatioTemporalDataset ds =
      fetch_power({request_for("srv", {"T2M"}, "20220101", "20220103")}, options,
                  &report);
  server.stop();
  server_thread.join();

  CHECK(report.errors.empty());
  REQUIRE(ds.T == 3);
  CHECK(ds.value_at(0, 0, 0) == doctest::Approx(2.5));
  CHECK(hits.load() == 2);
}

TEST_CASE("locations csv asset loads") {
  TempDir dir("ggnet_locs");
  std::ofstream(dir.path / "locs.csv")
      << "location_id,country,latitude,longitude\n"
      << "# comment line\n"
      << "vienna,Austria,48.2082,16.3738\n"
      << "canberra,Australia,-35.2809,149.1300\n";
  auto locs = load_locations_csv((dir.path / "locs.csv").string());
  REQUIRE(locs.size() == 2);
  CHECK(locs[0].id == "vienna");
  CHECK(locs[1].latitude == doctest::Approx(-35.2809));
}
