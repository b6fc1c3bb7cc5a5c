#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "http_server.hpp"

// After Eigen: <resolv.h>, pulled in here, defines a _res macro.
#include <httplib.h>

namespace {

using json = nlohmann::json;

class HttpTest : public ::testing::Test {
 protected:
  void SetUp() override {
    port = frontend.bind("127.0.0.1", 0);
    ASSERT_GT(port, 0);
    server = std::thread([this] { frontend.listen(); });
  }
  void TearDown() override {
    frontend.stop();
    if (server.joinable()) server.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_connection_timeout(5);
    c.set_read_timeout(30);
    return c;
  }

  kerl::ChatService service{kerl::ChatService::Options{}};
  std::ostringstream log;
  kerl::cli::HttpFrontend frontend{service, &log};
  int port = -1;
  std::thread server;
};

TEST_F(HttpTest, ServesTheApiOverASocket) {
  auto c = client();
  auto health = c.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body).at("status"), "loading");
  auto early = c.Post("/api/session", "", "application/json");
  ASSERT_TRUE(early);
  EXPECT_EQ(early->status, 503);

  service.load(service_testing::copy_of(service_testing::rec_model()));
  auto created = c.Post("/api/session", "", "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 200);
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  const std::string id = json::parse(created->body).at("session_id");

  auto msg = c.Post("/api/message", json{{"session_id", id}, {"text", "I like @3"}}.dump(), "application/json");
  ASSERT_TRUE(msg);
  ASSERT_EQ(msg->status, 200);
  EXPECT_EQ(msg->get_header_value("Content-Type"), "application/json");
  const json b = json::parse(msg->body);
  EXPECT_EQ(b.at("linked_entities")[0].at("entity_id"), 3);
  EXPECT_FALSE(b.at("recommendations").empty());

  auto card = c.Get("/api/entity/13");
  ASSERT_TRUE(card);
  EXPECT_EQ(card->status, 200);
  EXPECT_EQ(json::parse(card->body).at("name"), "exciting");

  auto pre = c.Options("/api/message");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);

  auto del = c.Delete("/api/session/" + id);
  ASSERT_TRUE(del);
  EXPECT_EQ(del->status, 204);
  auto gone = c.Delete("/api/session/" + id);
  ASSERT_TRUE(gone);
  EXPECT_EQ(gone->status, 404);

  EXPECT_NE(log.str().find("POST /api/message 200"), std::string::npos);
}

TEST(HttpFrontendLifecycle, StopBeforeListenDoesNotHang) {
  kerl::ChatService service({});
  kerl::cli::HttpFrontend frontend(service);
  ASSERT_GT(frontend.bind("127.0.0.1", 0), 0);
  frontend.stop();
  EXPECT_FALSE(frontend.listen());
}

TEST(HttpFrontendLifecycle, StopRacingListenReturns) {
  for (int i = 0; i < 20; ++i) {
    kerl::ChatService service({});
    kerl::cli::HttpFrontend frontend(service);
    ASSERT_GT(frontend.bind("127.0.0.1", 0), 0);
    std::thread t([&] { frontend.listen(); });
    frontend.stop();
    t.join();
  }
}

}  // namespace
