#include <math.h>
#include <stdio.h>
#include <string.h>

#include "greenunit.h"

#define CHECK(cond)                                                  \
  do {                                                               \
    if (!(cond)) {                                                   \
      char msg[256] = {0};                                           \
      gu_last_error_message(msg, sizeof msg);                        \
      fprintf(stderr, "check failed: %s (%s)\n", #cond, msg);        \
      return 1;                                                      \
    }                                                                \
  } while (0)

int main(int argc, char **argv) {
  GuFactors *f = gu_factors_default();
  CHECK(f != NULL);

  double c = 0.0;
  CHECK(gu_c_elec(f, &c) == GU_STATUS_OK);
  CHECK(fabs(c / 1.24e-4 - 1.0) < 0.01);

  double ti = 0.0;
  CHECK(gu_transfer_intensity(f, &ti) == GU_STATUS_OK);
  CHECK(fabs(ti / 52.0 - 1.0) < 0.01);

  GuUnitDeltas d = {.energy_j = 509.0, .data_mb = 8.92, .duration_s = 25.47};
  GuEmissionEntry e;
  CHECK(gu_emission_breakdown(f, &d, &e) == GU_STATUS_OK);
  CHECK(fabs(e.embodied_network_g - 0.21 * e.use_network_g) < 1e-15);

  GuFactorValues v;
  CHECK(gu_factors_get(f, &v) == GU_STATUS_OK);
  v.resource_share = 2.0;
  CHECK(gu_factors_set(f, &v) == GU_STATUS_INVALID_INPUT);
  CHECK(gu_last_error_message(NULL, 0) > 1);

  GuProjection p;
  CHECK(gu_scale_projection(0.496, 2e9, 12.0, 1.32, &p) == GU_STATUS_OK);
  CHECK(fabs(p.annual_saving_t - 11904.0) < 1e-6);
  CHECK(gu_scale_projection(0.496, 0.0, 12.0, 1.32, &p) == GU_STATUS_INVALID_INPUT);

  if (argc > 1) {
    GuStore *s = NULL;
    CHECK(gu_store_open(argv[1], &s) == GU_STATUS_OK);
    char *doc = NULL;
    CHECK(gu_store_compare(s, f, "outlook", "proton", "csv", &doc) == GU_STATUS_OK);
    CHECK(strstr(doc, "section,unit,metric,field,value") != NULL);
    gu_string_free(doc);
    CHECK(gu_store_compare(s, f, "outlook", "nosuch", "csv", &doc) == GU_STATUS_NOT_FOUND);
    gu_store_free(s);
  }

  gu_factors_free(f);
  printf("ok %s\n", gu_version());
  return 0;
}
