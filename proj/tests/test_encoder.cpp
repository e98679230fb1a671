#include <doctest.h>

#include <atomic>
#include <nlohmann/json.hpp>
#include <thread>

#include "evomail/encoder.hpp"
#include "evomail/error.hpp"
#include "evomail/graph.hpp"

// after Eigen: resolv.h defines _res
#include <httplib.h>

using namespace evomail;

namespace {

const std::vector<std::string> kLong = {
    "the quarterly budget review meeting has been moved to thursday afternoon in the large conference room "
    "please bring the updated spreadsheets and the vendor contracts",
    "our hiking club will meet at the trailhead at seven in the morning bring water sturdy boots and a light "
    "jacket because the weather on the ridge changes quickly",
    "congratulations you have been selected to receive an exclusive prize claim your reward today by "
    "confirming your shipping address and paying a small handling fee",
    "the kernel patch fixes a race in the block layer where two threads could free the same request "
    "structure under heavy load on multi queue devices",
    "grandma's apple pie recipe calls for six tart apples a cup of sugar cinnamon nutmeg and a buttery "
    "crust baked until golden brown on the top",
};

// Minimal embedding service: vector = [len, count of 'a', 1, 0...].
struct FakeService {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> requests{0};
    int dim = 4;

    FakeService() {
        server.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests;
            const auto j = nlohmann::json::parse(req.body);
            nlohmann::json vectors = nlohmann::json::array();
            for (const auto& t : j.at("texts")) {
                const auto s = t.get<std::string>();
                std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
                v[0] = static_cast<double>(s.size());
                v[1] = static_cast<double>(std::count(s.begin(), s.end(), 'a'));
                v[2] = 1.0;
                vectors.push_back(v);
            }
            res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
        });
        server.Post("/bad/embed", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("{\"vectors\": [[1]]}", "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeService() {
        server.stop();
        thread.join();
    }
};

}  // namespace

TEST_CASE("hashed encoder basics") {
    HashedEncoder enc(256);
    const auto a = enc.encode("free money now for you");
    const auto b = enc.encode("free money now for you");
    CHECK(*a == *b);
    CHECK(a->norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine(*a, *b) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a->size() == 256);

    const auto empty = enc.encode("");
    CHECK((*empty)[0] == 1.0);
    CHECK(empty->norm() == 1.0);

    // shorter than three tokens still hashes the whole sequence
    const auto two = enc.encode("hello world");
    CHECK(two->norm() == doctest::Approx(1.0));
    CHECK(*two != *empty);
}

TEST_CASE("unrelated long texts are nearly orthogonal") {
    HashedEncoder enc(256);
    for (std::size_t i = 0; i < kLong.size(); ++i) {
        for (std::size_t j = i + 1; j < kLong.size(); ++j) {
            CHECK(std::abs(cosine(*enc.encode(kLong[i]), *enc.encode(kLong[j]))) < 0.3);
        }
    }
}

TEST_CASE("cache hits and transparency") {
    HashedEncoder enc(64);
    const auto first = enc.encode_batch({"a b c d", "x y z", "a b c d"});
    CHECK(enc.cache_size() == 2);
    CHECK(first[0] == first[2]);
    const auto hits = enc.cache_hits();
    const auto again = enc.encode("x y z");
    CHECK(enc.cache_hits() == hits + 1);
    CHECK(again == first[1]);
    enc.clear_cache();
    CHECK(enc.cache_size() == 0);
    CHECK(*enc.encode("x y z") == *first[1]);
}

TEST_CASE("pair prompt template") {
    const NodeDescriptor a{"email", "Win now :: claim your prize"};
    const NodeDescriptor b{"sender", "x@y.com"};
    const auto p = render_pair_prompt(a, b, "sent_to", kDefaultTaskContext);
    CHECK(p == "TASK: classify whether the email is spam or phishing\n"
               "NODE_A(email): Win now :: claim your prize\n"
               "NODE_B(sender): x@y.com\n"
               "RELATION: sent_to");
    CHECK(render_pair_prompt(a, b, "sent_to", kDefaultTaskContext) == p);

    HashedEncoder enc(256);
    const auto pa = enc.encode(p);
    const auto pb = enc.encode(render_pair_prompt(a, b, "linked_to", kDefaultTaskContext));
    CHECK(*pa != *pb);
    CHECK(pb->norm() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(*enc.encode(render_pair_prompt(b, a, "sent_to", kDefaultTaskContext)) != *pa);
}

TEST_CASE("email description truncates the body") {
    EmailDocument d;
    d.subject = "Subject";
    d.body = std::string(1000, 'b');
    const auto desc = email_description(d);
    CHECK(desc.find(std::string(200, 'b')) != std::string::npos);
    CHECK(desc.find(std::string(201, 'b')) == std::string::npos);
    CHECK(desc.starts_with("Subject"));
}

TEST_CASE("remote encoder against a local service") {
    FakeService service;
    RemoteEncoder enc("http://127.0.0.1:" + std::to_string(service.port) + "/v1", 4, std::chrono::milliseconds(2000),
                      2, 2);
    std::vector<std::string> texts = {"aaa", "ab", "", "abc", "aaaa", "b"};
    const auto out = enc.encode_batch(texts);
    REQUIRE(out.size() == texts.size());
    for (const auto& v : out) CHECK(v->norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((*out[2])[0] == 1.0);
    Eigen::VectorXd expect(4);
    expect << 3, 3, 1, 0;
    CHECK(out[0]->isApprox(expect.normalized()));
    CHECK(service.requests.load() == 3);  // five texts, batches of two
    enc.encode("aaa");
    CHECK(service.requests.load() == 3);

    RemoteEncoder wrong_dim("http://127.0.0.1:" + std::to_string(service.port) + "/bad", 4,
                            std::chrono::milliseconds(2000));
    CHECK_THROWS_AS(wrong_dim.encode("x"), RemoteUnavailable);
    RemoteEncoder missing("http://127.0.0.1:" + std::to_string(service.port) + "/nowhere", 4,
                          std::chrono::milliseconds(2000));
    CHECK_THROWS_AS(missing.encode("x"), RemoteUnavailable);
}

TEST_CASE("remote encoder unreachable") {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    RemoteEncoder enc("http://127.0.0.1:" + std::to_string(port), 4, std::chrono::milliseconds(300));
    CHECK_THROWS_AS(enc.encode("x"), RemoteUnavailable);
    CHECK_THROWS_AS(RemoteEncoder("https://h", 4, std::chrono::milliseconds(10)), ConfigError);
}
