#include <sstream>

#include "catch_amalgamated.hpp"
#include "fgs/comm.hpp"

using namespace fgs;

TEST_CASE("byte sizing", "[comm]") {
  STATIC_CHECK(bytes_of(0, Precision::f16) == 0);
  STATIC_CHECK(bytes_of(1, Precision::f16) == 2);
  STATIC_CHECK(bytes_of(1, Precision::f64) == 8);
  STATIC_CHECK(bytes_of(4'550'000, Precision::f16) == 9'100'000);
  CHECK(static_cast<double>(bytes_of(4'550'000, Precision::f16)) / kBytesPerMegabyte == 9.1);
  // The 1720 MB full model is 860 million f16 parameters.
  STATIC_CHECK(bytes_of(860'000'000, Precision::f16) == 1'720'000'000);
}

TEST_CASE("transfer time", "[comm]") {
  CHECK(transfer_time(0, {1e6, 0.01, LinkKind::uplink}) == 0.01);
  CHECK(transfer_time(1'000'000, {1e6, 0.0, LinkKind::uplink}) == 1.0);
  CHECK(transfer_time(500, {1000.0, 0.25, LinkKind::d2d}) == 0.75);
  CHECK_THROWS_AS(transfer_time(1, {0.0, 0.0, LinkKind::d2d}), ConfigError);
}

TEST_CASE("ledger totals", "[comm]") {
  CommLedger ledger;
  CHECK(ledger.totals().bytes == 0);
  CHECK(ledger.totals().seconds == 0.0);

  ledger.record({1, Endpoint::server(), Endpoint::client(0), PayloadKind::model_down, 100, 0.5});
  ledger.record({1, Endpoint::client(0), Endpoint::client(1), PayloadKind::model_relay, 250, 0.25});
  ledger.record({2, Endpoint::client(1), Endpoint::server(), PayloadKind::model_up, 7, 1.0});
  CHECK(ledger.totals().bytes == 357);
  CHECK(ledger.totals().seconds == 1.75);
  CHECK(ledger.totals(1).bytes == 350);
  CHECK(ledger.totals(0).bytes == 0);
  CHECK(ledger.round_totals(2).bytes == 7);
  CHECK(ledger.count(1, PayloadKind::model_relay) == 1);
  CHECK(ledger.count(2, PayloadKind::model_relay) == 0);

  CHECK_THROWS(ledger.record({1, Endpoint::server(), Endpoint::client(0), PayloadKind::model_down, 1, 0.0}));
  CHECK_THROWS(ledger.record({3, Endpoint::server(), Endpoint::client(0), PayloadKind::model_down, 1, -1.0}));
  CHECK(ledger.events().size() == 3);
}

TEST_CASE("ledger prefix totals never decrease", "[comm][property]") {
  CommLedger ledger;
  std::uint64_t expect = 0;
  for (std::size_t r = 1; r <= 20; ++r) {
    for (std::size_t k = 0; k < r % 4; ++k) {
      ledger.record({r, Endpoint::client(0), Endpoint::server(), PayloadKind::model_up, r * 10 + k, 0.01});
      expect += r * 10 + k;
    }
  }
  CHECK(ledger.totals().bytes == expect);
  for (std::size_t r = 1; r <= 20; ++r) CHECK(ledger.totals(r).bytes >= ledger.totals(r - 1).bytes);
}

TEST_CASE("ledger CSV", "[comm]") {
  CommLedger ledger;
  ledger.record({1, Endpoint::server(), Endpoint::client(3), PayloadKind::model_down, 256, 0.5});
  ledger.record({1, Endpoint::client(3), Endpoint::server(), PayloadKind::smash_up, 64, 0.125});
  std::ostringstream os;
  ledger.write_csv(os);
  CHECK(os.str() ==
        "round,src,dst,kind,bytes,seconds\n"
        "1,server,3,model_down,256,0.5\n"
        "1,3,server,smash_up,64,0.125\n");
}
