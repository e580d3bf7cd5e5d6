# Copyright (C) 2024- The histrecon Developers
