/* Compiled as C: the public header must stay valid C99. */
#include <stdio.h>
#include <string.h>

#include "eihi/eihi.h"

int main(void) {
  eihi_report* r = NULL;
  eihi_status s = eihi_experiment_run(NULL, &r);
  if (s != EIHI_ERR_INVALID_ARGUMENT || r != NULL) return 1;
  if (strlen(eihi_last_error()) == 0) return 2;
  s = eihi_experiment_run("{", &r);
  if (s != EIHI_ERR_PARSE) return 3;
  if (strcmp(eihi_status_name(EIHI_ERR_CONFIG), "config") != 0) return 4;
  printf("eihi %s\n", eihi_version());
  return 0;
}
