# Copyright 2021 The Speed Advisory Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Package setup for the speed advisory experiments."""

import setuptools

setuptools.setup(
    name='speed-advisory',
    version='0.0.1',
    install_requires=['numpy>=1.19.5', 'scipy>=1.5.4', 'schedule>=0.6.0'],
    packages=['advisory', 'advisory.emission'],
    package_data={'advisory.emission': ['default_models.json']},
    py_modules=['advisory_resources', 'schedule_advisory'],
    data_files=[('scenarios', [
        'scenarios/two_lane.json', 'scenarios/three_lane.json',
        'scenarios/revisions_example.json'
    ])])
