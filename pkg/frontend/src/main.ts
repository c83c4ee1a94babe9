import { ApiClient } from './api.js'
import { SessionController } from './controller.js'
import { ConsoleView } from './view.js'

const api = new ApiClient('')
const root = document.getElementById('app')
if (!root) throw new Error('missing #app mount point')

const controller = new SessionController(api, (view) => consoleView.render(view))
const consoleView = new ConsoleView(root, controller)
consoleView.bind()
consoleView.render(controller.view)

Promise.all([api.listPools(), api.listSessions()])
  .then(([pools, sessions]) =>
    consoleView.populatePools(pools.pools, sessions.sessions.map((s) => ({ session: s.session, t: s.t }))),
  )
  .catch((err) => {
    const notice = document.getElementById('notice')
    if (notice) notice.textContent = String(err)
  })
