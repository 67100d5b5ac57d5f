#include <gtest/gtest.h>

#include <filesystem>
#include <future>
#include <thread>

#include "duet/heuristic.hpp"
#include "duet/service.hpp"

using namespace duet;
using json = nlohmann::json;

namespace {

const std::string kSource = DUET_SOURCE_DIR;

std::string sample_csv() { return read_file(kSource + "/data/sample/credit.csv"); }
json sample_meta() { return json::parse(read_file(kSource + "/data/sample/credit.meta.json")); }

ApiRequest post(const std::string& path, const json& body = json::object(), const std::string& token = "") {
  ApiRequest r{"POST", path, body.dump(), {}, {}};
  if (!token.empty()) r.headers["x-request-token"] = token;
  return r;
}

ApiRequest get(const std::string& path) { return {"GET", path, "", {}, {}}; }

SessionService heuristic_service() {
  return SessionService([] { return std::make_unique<HeuristicBackend>(); });
}

std::string create(SessionService& svc) {
  auto r = svc.handle(post("/sessions", {{"csv", sample_csv()}, {"meta", sample_meta()}}));
  EXPECT_EQ(r.status, 201) << r.body;
  return json::parse(r.body)["session_id"];
}

std::string error_code(const ApiResponse& r) { return json::parse(r.body)["error"]["code"]; }

// Blocks inside complete() until released, to hold a session mid-call.
class GateBackend : public ChatBackend {
 public:
  GateBackend(std::shared_future<void> gate, std::shared_ptr<std::promise<void>> entered)
      : gate_(std::move(gate)), entered_(std::move(entered)) {}
  std::string complete(const ChatRequest& r) override {
    if (entered_) {
      entered_->set_value();
      entered_.reset();
    }
    gate_.wait();
    return inner_.complete(r);
  }

 private:
  std::shared_future<void> gate_;
  std::shared_ptr<std::promise<void>> entered_;
  HeuristicBackend inner_;
};

class FailingBackend : public ChatBackend {
 public:
  std::string complete(const ChatRequest&) override { throw BackendError("upstream down"); }
};

class GibberishBackend : public ChatBackend {
 public:
  std::string complete(const ChatRequest&) override { return "I cannot help with that"; }
};

}  // namespace

TEST(Service, CreateInstructAcceptExport) {
  auto svc = heuristic_service();
  std::string id = create(svc);
  EXPECT_EQ(id.size(), 32u);
  auto ins = svc.handle(post("/sessions/" + id + "/instruct", {{"text", "Please generate new variants of f3."}}));
  ASSERT_EQ(ins.status, 200) << ins.body;
  auto pj = json::parse(ins.body);
  ASSERT_FALSE(pj["proposal"].empty());
  EXPECT_EQ(pj["preview"].size(), pj["proposal"].size());
  auto acc = svc.handle(post("/sessions/" + id + "/accept", {{"indices", {0}}}));
  ASSERT_EQ(acc.status, 200) << acc.body;
  EXPECT_EQ(json::parse(acc.body)["accepted"][0], pj["proposal"][0]);

  auto ex = svc.handle(get("/sessions/" + id + "/export"));
  ASSERT_EQ(ex.status, 200);
  EXPECT_EQ(ex.content_type, "text/csv");
  auto original_header = csv::parse(sample_csv()).front();
  auto header = csv::parse(ex.body).front();
  ASSERT_EQ(header.size(), original_header.size() + 1);
  std::vector<std::string> extra;
  for (const auto& h : header) {
    if (std::find(original_header.begin(), original_header.end(), h) == original_header.end()) extra.push_back(h);
  }
  ASSERT_EQ(extra.size(), 1u);
  EXPECT_NO_THROW(parse(extra[0], OperatorSet::standard()));
}

TEST(Service, ExportRoundTripsAt17Digits) {
  auto svc = heuristic_service();
  std::string id = create(svc);
  ASSERT_EQ(svc.handle(post("/sessions/" + id + "/auto", {{"iterations", 2}})).status, 200);
  auto ex = svc.handle(get("/sessions/" + id + "/export"));
  auto state = json::parse(svc.handle(get("/sessions/" + id)).body);
  auto loaded = load_csv_text(ex.body, meta_from_json(sample_meta()));
  auto original = load_csv_text(sample_csv(), meta_from_json(sample_meta()));
  EXPECT_EQ(loaded.labels, original.labels);
  EXPECT_EQ(loaded.table.cols(), state["columns"].size());
  // Recompute generated columns from the original values; they must match bit for bit.
  FeatureTable t = original.table;
  for (std::size_t c = t.cols(); c < loaded.table.cols(); ++c) {
    auto seq = parse(state["columns"][c]["expression"].get<std::string>(), OperatorSet::standard());
    t = apply_sequence(t, seq).table;
  }
  EXPECT_EQ(loaded.table.columns(), t.columns());
}

TEST(Service, AcceptOutOfRangeIs400) {
  auto svc = heuristic_service();
  std::string id = create(svc);
  svc.handle(post("/sessions/" + id + "/instruct", {{"text", "variants of f1"}}));
  auto r = svc.handle(post("/sessions/" + id + "/accept", {{"indices", {99}}}));
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(error_code(r), "BAD_REQUEST");
  EXPECT_EQ(svc.handle(post("/sessions/" + id + "/accept", {{"indices", {-1}}})).status, 400);
  EXPECT_EQ(svc.handle(post("/sessions/" + id + "/accept", json::object())).status, 400);
}

TEST(Service, SecondInstructWhilePendingIs409) {
  auto svc = heuristic_service();
  std::string id = create(svc);
  EXPECT_EQ(svc.handle(post("/sessions/" + id + "/instruct", {{"text", "a f1"}})).status, 200);
  auto r = svc.handle(post("/sessions/" + id + "/instruct", {{"text", "b f2"}}));
  EXPECT_EQ(r.status, 409);
  EXPECT_EQ(error_code(r), "CONFLICT");
}

TEST(Service, ConcurrentInstructOneWins) {
  std::promise<void> release;
  std::shared_future<void> gate = release.get_future().share();
  auto entered = std::make_shared<std::promise<void>>();
  auto entered_future = entered->get_future();
  bool first = true;
  SessionService svc([&]() -> std::unique_ptr<ChatBackend> {
    if (first) {
      first = false;
      return std::make_unique<GateBackend>(gate, entered);
    }
    return std::make_unique<HeuristicBackend>();
  });
  std::string id = create(svc);
  auto a = std::async(std::launch::async, [&] { return svc.handle(post("/sessions/" + id + "/instruct", {{"text", "x f1"}})); });
  entered_future.wait();  // a is inside the backend call
  auto b = std::async(std::launch::async, [&] { return svc.handle(post("/sessions/" + id + "/instruct", {{"text", "y f2"}})); });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  release.set_value();
  std::vector<int> statuses{a.get().status, b.get().status};
  std::sort(statuses.begin(), statuses.end());
  EXPECT_EQ(statuses, (std::vector<int>{200, 409}));
}

TEST(Service, SessionsDoNotBlockEachOther) {
  std::promise<void> release;
  std::shared_future<void> gate = release.get_future().share();
  auto entered = std::make_shared<std::promise<void>>();
  auto entered_future = entered->get_future();
  int made = 0;
  SessionService svc([&]() -> std::unique_ptr<ChatBackend> {
    if (made++ == 0) return std::make_unique<GateBackend>(gate, entered);
    return std::make_unique<HeuristicBackend>();
  });
  std::string slow = create(svc), fast = create(svc);
  auto a = std::async(std::launch::async, [&] { return svc.handle(post("/sessions/" + slow + "/diagnose")); });
  entered_future.wait();
  EXPECT_EQ(svc.handle(post("/sessions/" + fast + "/diagnose")).status, 200);
  EXPECT_EQ(svc.handle(get("/sessions/" + fast)).status, 200);
  release.set_value();
  EXPECT_EQ(a.get().status, 200);
}

TEST(Service, UnknownSessionIs404) {
  auto svc = heuristic_service();
  auto r = svc.handle(get("/sessions/deadbeef"));
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(error_code(r), "NOT_FOUND");
  EXPECT_EQ(svc.handle(post("/sessions/deadbeef/undo")).status, 404);
  EXPECT_EQ(svc.handle(get("/nowhere")).status, 404);
}

TEST(Service, BackendFailureIs502AndParseFailureIs422) {
  SessionService down([] { return std::make_unique<FailingBackend>(); });
  std::string id = create(down);
  auto r = down.handle(post("/sessions/" + id + "/diagnose"));
  EXPECT_EQ(r.status, 502);
  EXPECT_EQ(error_code(r), "BACKEND_FAILED");

  SessionService gib([] { return std::make_unique<GibberishBackend>(); });
  std::string id2 = create(gib);
  auto g = gib.handle(post("/sessions/" + id2 + "/instruct", {{"text", "anything"}}));
  EXPECT_EQ(g.status, 422);
  EXPECT_EQ(error_code(g), "PARSE_FAILED");
  EXPECT_FALSE(json::parse(gib.handle(get("/sessions/" + id2)).body)["pending"].is_object());
}

TEST(Service, BadRequests) {
  auto svc = heuristic_service();
  EXPECT_EQ(svc.handle(post("/sessions", {{"csv", "a,b\n1,2\n"}, {"meta", {{"target", "zz"}}}})).status, 400);
  EXPECT_EQ(svc.handle(post("/sessions", json::object())).status, 400);
  ApiRequest bad{"POST", "/sessions", "{not json", {}, {}};
  EXPECT_EQ(svc.handle(bad).status, 400);
  std::string id = create(svc);
  EXPECT_EQ(svc.handle(post("/sessions/" + id + "/instruct", {{"text", "  "}})).status, 400);
  EXPECT_EQ(svc.handle(post("/sessions/" + id + "/auto", {{"iterations", 0}})).status, 400);
  EXPECT_EQ(svc.handle(post("/sessions/" + id + "/undo")).status, 409);
}

TEST(Service, RequestTokenReplaysResponse) {
  auto svc = heuristic_service();
  std::string id = create(svc);
  auto first = svc.handle(post("/sessions/" + id + "/instruct", {{"text", "variants of f2"}}, "tok-1"));
  auto again = svc.handle(post("/sessions/" + id + "/instruct", {{"text", "variants of f2"}}, "tok-1"));
  EXPECT_EQ(first.status, 200);
  EXPECT_EQ(again.status, 200);
  EXPECT_EQ(first.body, again.body);
  auto acc1 = svc.handle(post("/sessions/" + id + "/accept", {{"indices", {0, 1}}}, "tok-2"));
  auto acc2 = svc.handle(post("/sessions/" + id + "/accept", {{"indices", {0, 1}}}, "tok-2"));
  EXPECT_EQ(acc1.body, acc2.body);
  auto state = json::parse(svc.handle(get("/sessions/" + id)).body);
  EXPECT_EQ(state["history_depth"], 1);  // applied once

  auto c1 = svc.handle(post("/sessions", {{"csv", sample_csv()}, {"meta", sample_meta()}}, "create-1"));
  auto c2 = svc.handle(post("/sessions", {{"csv", sample_csv()}, {"meta", sample_meta()}}, "create-1"));
  EXPECT_EQ(c1.body, c2.body);
  EXPECT_EQ(svc.session_count(), 2u);
}

TEST(Service, SessionsAreIsolated) {
  auto svc = heuristic_service();
  std::string a = create(svc), b = create(svc);
  svc.handle(post("/sessions/" + a + "/auto", {{"iterations", 1}}));
  auto sa = json::parse(svc.handle(get("/sessions/" + a)).body);
  auto sb = json::parse(svc.handle(get("/sessions/" + b)).body);
  EXPECT_GT(sa["columns"].size(), sb["columns"].size());
  EXPECT_EQ(sb["columns"].size(), 5u);
  EXPECT_EQ(svc.handle({"DELETE", "/sessions/" + a, "", {}, {}}).status, 200);
  EXPECT_EQ(svc.handle(get("/sessions/" + a)).status, 404);
  EXPECT_EQ(svc.handle(get("/sessions/" + b)).status, 200);
}

TEST(Service, TtlEviction) {
  ServiceConfig cfg;
  cfg.ttl = std::chrono::seconds(0);
  SessionService svc([] { return std::make_unique<HeuristicBackend>(); }, cfg);
  std::string id = create(svc);
  std::this_thread::sleep_for(std::chrono::milliseconds(5));
  EXPECT_EQ(svc.handle(get("/sessions/" + id)).status, 404);
}

TEST(Service, SnapshotRestore) {
  auto svc = heuristic_service();
  std::string id = create(svc);
  svc.handle(post("/sessions/" + id + "/auto", {{"iterations", 2}}));
  auto before = svc.handle(get("/sessions/" + id + "/export")).body;
  auto snap = json::parse(svc.snapshot().dump());
  auto fresh = heuristic_service();
  fresh.restore(snap);
  EXPECT_EQ(fresh.handle(get("/sessions/" + id + "/export")).body, before);
}

TEST(Service, OverRealHttp) {
  auto svc = heuristic_service();
  httplib::Server server;
  mount(server, svc);
  auto dir = std::filesystem::temp_directory_path() / "duet_static_test";
  std::filesystem::create_directories(dir);
  write_text((dir / "index.html").string(), "<html>ui</html>");
  ASSERT_TRUE(server.set_mount_point("/", dir.string()));
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  httplib::MultipartFormDataItems items{{"data", sample_csv(), "credit.csv", "text/csv"},
                                        {"meta", sample_meta().dump(), "credit.meta.json", "application/json"}};
  auto created = cli.Post("/sessions", items);
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201) << created->body;
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  std::string id = json::parse(created->body)["session_id"];

  httplib::Headers h{{"X-Request-Token", "abc"}};
  auto i1 = cli.Post("/sessions/" + id + "/instruct", h, R"({"text":"variants of f1"})", "application/json");
  auto i2 = cli.Post("/sessions/" + id + "/instruct", h, R"({"text":"variants of f1"})", "application/json");
  ASSERT_TRUE(i1 && i2);
  EXPECT_EQ(i1->status, 200);
  EXPECT_EQ(i2->body, i1->body);
  auto acc = cli.Post("/sessions/" + id + "/accept", R"({"indices":[0]})", "application/json");
  EXPECT_EQ(acc->status, 200);
  auto ex = cli.Get("/sessions/" + id + "/export");
  EXPECT_EQ(ex->status, 200);
  EXPECT_EQ(csv::parse(ex->body).front().size(), 7u);
  auto opt = cli.Options("/sessions");
  EXPECT_EQ(opt->status, 204);
  auto missing = cli.Get("/sessions/ffff");
  EXPECT_EQ(missing->status, 404);
  auto ui = cli.Get("/index.html");
  ASSERT_TRUE(ui);
  EXPECT_EQ(ui->body, "<html>ui</html>");

  server.stop();
  th.join();
}
